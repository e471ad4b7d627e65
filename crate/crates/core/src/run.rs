//! Run configuration, single runs, sweeps and report output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AlgebraError, ConfigError, Error, PipelineError};
use crate::io_phase::OverlapPolicy;
use crate::metrics::{check, MetricsReport, Verdict};
use crate::model::{AggregatorLayout, FileDomainMap, ProcRequest, StripeConfig, Topology};
use crate::pipeline::{run_tam, run_two_phase, write_trace_jsonl, PipelineOptions, PipelineRun};
use crate::select::{build_layout, two_phase_layout, GlobalPolicy, LocalPick};
use crate::verify::{compare, serial_oracle, Comparison};
use crate::workloads::{WorkloadKind, WorkloadSpec};

/// Exit status for a verified run.
pub const EXIT_OK: i32 = 0;
/// Exit status when an image differs from the oracle or the data path failed.
pub const EXIT_MISMATCH: i32 = 1;
/// Exit status for invalid configuration or input.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Tam,
    TwoPhase,
    Both,
}

impl Method {
    fn runs(self) -> &'static [Method] {
        match self {
            Method::Tam => &[Method::Tam],
            Method::TwoPhase => &[Method::TwoPhase],
            Method::Both => &[Method::Tam, Method::TwoPhase],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Tam => "tam",
            Method::TwoPhase => "two_phase",
            Method::Both => "both",
        }
    }
}

/// Where results go. Paths for per-method artifacts get the method name
/// inserted before the extension when more than one method runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// JSON report document; stdout when absent.
    pub report: Option<PathBuf>,
    /// CSV rows, one per run, with a header line.
    pub csv: Option<PathBuf>,
    /// Message trace as JSON lines.
    pub trace: Option<PathBuf>,
    /// Final file image in sidecar format.
    pub dump: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub procs: usize,
    pub nodes: usize,
    pub local_aggs_per_node: usize,
    /// Global aggregator count; the stripe count when absent.
    pub global_aggs: Option<usize>,
    pub stripe_size: u64,
    pub stripe_count: usize,
    pub stripes_per_round: usize,
    pub global_policy: GlobalPolicy,
    pub local_pick: LocalPick,
    pub overlap_policy: OverlapPolicy,
    pub method: Method,
    pub seed: u64,
    pub verify: bool,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::default(),
            procs: 8,
            nodes: 2,
            local_aggs_per_node: 1,
            global_aggs: None,
            stripe_size: 1 << 16,
            stripe_count: 4,
            stripes_per_round: 1,
            global_policy: GlobalPolicy::default(),
            local_pick: LocalPick::default(),
            overlap_policy: OverlapPolicy::default(),
            method: Method::default(),
            seed: 0,
            verify: true,
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn num_global(&self) -> usize {
        self.global_aggs.unwrap_or(self.stripe_count)
    }

    pub fn procs_per_node(&self) -> usize {
        self.procs.checked_div(self.nodes).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.procs == 0 {
            return Err(ConfigError::field("procs", "must be at least 1"));
        }
        if self.nodes == 0 {
            return Err(ConfigError::field("nodes", "must be at least 1"));
        }
        if !self.procs.is_multiple_of(self.nodes) {
            return Err(ConfigError::field(
                "nodes",
                format!("{} processes do not split evenly over {} nodes", self.procs, self.nodes),
            ));
        }
        let q = self.procs_per_node();
        if self.local_aggs_per_node == 0 || self.local_aggs_per_node > q {
            return Err(ConfigError::field(
                "local_aggs_per_node",
                format!("must be in 1..={q}, got {}", self.local_aggs_per_node),
            ));
        }
        let g = self.num_global();
        if g == 0 || g > self.procs {
            return Err(ConfigError::field("global_aggs", format!("must be in 1..={}, got {g}", self.procs)));
        }
        if self.stripe_size == 0 {
            return Err(ConfigError::field("stripe_size", "must be positive"));
        }
        if self.stripe_count == 0 {
            return Err(ConfigError::field("stripe_count", "must be at least 1"));
        }
        if self.stripes_per_round == 0 {
            return Err(ConfigError::field("stripes_per_round", "must be at least 1"));
        }
        match self.workload.kind {
            WorkloadKind::Contiguous1d if self.workload.block_bytes == 0 => {
                Err(ConfigError::field("workload.block_bytes", "must be positive"))
            }
            WorkloadKind::Btio | WorkloadKind::S3d if self.workload.n == 0 => {
                Err(ConfigError::field("workload.n", "must be positive"))
            }
            WorkloadKind::Btio if self.workload.vars == 0 => {
                Err(ConfigError::field("workload.vars", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn label(&self) -> String {
        match self.workload.kind {
            WorkloadKind::Contiguous1d => format!("contiguous1d(block={})", self.workload.block_bytes),
            WorkloadKind::Btio => format!("btio(n={},vars={})", self.workload.n, self.workload.vars),
            WorkloadKind::S3d => format!("s3d(n={})", self.workload.n),
            WorkloadKind::DecompFile => match &self.workload.decomp {
                Some(p) => format!("decomp_file({})", p.display()),
                None => "decomp_file(bundled)".to_owned(),
            },
        }
    }
}

/// First byte where a pipeline image differs from the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub offset: u64,
    pub pipeline: Option<u8>,
    pub oracle: Option<u8>,
}

/// Serialized result of one method run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub report: MetricsReport,
    pub checks: Vec<Verdict>,
    pub divergence: Option<Divergence>,
}

/// One method's run with everything needed for artifacts.
#[derive(Debug)]
pub struct MethodRun {
    pub method: Method,
    pub layout: AggregatorLayout,
    pub pipeline: PipelineRun,
    pub record: RunRecord,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub runs: Vec<MethodRun>,
}

impl RunOutcome {
    /// False when any verified image differs from the oracle.
    pub fn verified(&self) -> bool {
        self.runs.iter().all(|r| r.record.report.verified != Some(false))
    }

    pub fn exit_code(&self) -> i32 {
        if self.verified() {
            EXIT_OK
        } else {
            EXIT_MISMATCH
        }
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn document(&self) -> ReportDocument {
        ReportDocument { config: self.config.clone(), runs: self.records() }
    }
}

/// Top-level JSON report: the effective configuration and one record per
/// method run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: RunConfig,
    pub runs: Vec<RunRecord>,
}

/// Exit status for an error: configuration and input problems, including
/// overlapping writes under the strict policy, map to [`EXIT_CONFIG`].
pub fn exit_code_for(err: &Error) -> i32 {
    let overlap = matches!(
        err,
        Error::Oracle(_)
            | Error::Pipeline(PipelineError::Algebra(AlgebraError::Overlap { .. }))
            | Error::Pipeline(PipelineError::WriteOverlap { .. })
    );
    if err.is_config() || overlap {
        EXIT_CONFIG
    } else {
        EXIT_MISMATCH
    }
}

fn layouts(cfg: &RunConfig, method: Method) -> Result<AggregatorLayout, Error> {
    let topo = Topology::from_procs(cfg.procs, cfg.nodes)?;
    let g = cfg.num_global();
    Ok(match method {
        Method::TwoPhase => two_phase_layout(topo, g, cfg.global_policy, cfg.local_pick)?,
        _ => build_layout(topo, cfg.local_aggs_per_node, g, cfg.global_policy, cfg.local_pick)?,
    })
}

/// Runs one method on prepared requests and checks it against `oracle`.
pub fn run_method(
    cfg: &RunConfig,
    method: Method,
    procs: &[ProcRequest],
    oracle: Option<&crate::simfile::SimFile>,
) -> Result<MethodRun, Error> {
    let layout = layouts(cfg, method)?;
    let domains = FileDomainMap::new(StripeConfig::new(cfg.stripe_size, cfg.stripe_count)?, cfg.num_global())?;
    let opts = PipelineOptions { overlap: cfg.overlap_policy, stripes_per_round: cfg.stripes_per_round };
    let pipeline = match method {
        Method::TwoPhase => run_two_phase(procs, &layout, &domains, opts)?,
        _ => run_tam(procs, &layout, &domains, opts)?,
    };
    let mut report = pipeline.report(method.name(), &cfg.label(), procs, &layout, &domains);
    let divergence = oracle.and_then(|o| match compare(&pipeline.file, o) {
        Comparison::Equal => None,
        Comparison::Diverge { offset, a, b } => Some(Divergence { offset, pipeline: a, oracle: b }),
    });
    if oracle.is_some() {
        report.verified = Some(divergence.is_none());
    }
    let checks = report.predicted.as_ref().map(|p| check(&report, p)).unwrap_or_default();
    Ok(MethodRun { method, layout, pipeline, record: RunRecord { report, checks, divergence } })
}

/// Generates the workload, runs the selected methods and verifies each
/// image against the serial oracle. Both methods share the same requests
/// and seed.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, Error> {
    cfg.validate()?;
    let procs = cfg.workload.generate(cfg.procs, cfg.seed)?;
    let oracle = if cfg.verify { Some(serial_oracle(&procs, cfg.overlap_policy)?) } else { None };
    let runs = cfg
        .method
        .runs()
        .iter()
        .map(|&m| run_method(cfg, m, &procs, oracle.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutcome { config: cfg.clone(), runs })
}

/// Runs `base` once per local aggregator count, concurrently. Results come
/// back in the order of `counts`.
pub fn sweep(base: &RunConfig, counts: &[usize]) -> Vec<Result<RunOutcome, Error>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = counts
            .iter()
            .map(|&c| {
                let cfg = RunConfig { local_aggs_per_node: c, ..base.clone() };
                s.spawn(move || run(&cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

/// `path` with `-tag` inserted before the extension.
pub fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{tag}"),
    };
    path.with_file_name(name)
}

pub fn write_csv<W: Write>(records: &[RunRecord], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(e.into());
    out.write_record(MetricsReport::CSV_COLUMNS).map_err(to_io)?;
    for r in records {
        out.write_record(r.report.csv_row()).map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes trace and dump artifacts for every method run. `tag` is added to
/// the file names when non-empty, and the method name when several ran.
pub fn write_artifacts(outcome: &RunOutcome, tag: &str) -> Result<(), Error> {
    let several = outcome.runs.len() > 1;
    let name = |base: &Path, m: Method| {
        let mut p = base.to_path_buf();
        if !tag.is_empty() {
            p = tagged_path(&p, tag);
        }
        if several {
            p = tagged_path(&p, m.name());
        }
        p
    };
    for r in &outcome.runs {
        if let Some(base) = &outcome.config.output.trace {
            write_trace_jsonl(&r.pipeline.trace, create(&name(base, r.method))?)?;
        }
        if let Some(base) = &outcome.config.output.dump {
            r.pipeline.file.write_sidecar(create(&name(base, r.method))?)?;
        }
    }
    Ok(())
}

/// Writes the JSON document (to `report` or `stdout`) and the CSV file.
pub fn write_reports<T: Serialize>(
    doc: &T,
    records: &[RunRecord],
    output: &OutputPaths,
    stdout: &mut dyn Write,
) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(doc).map_err(|e| Error::Io(e.into()))?;
    match &output.report {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
        None => writeln!(stdout, "{json}")?,
    }
    if let Some(p) = &output.csv {
        write_csv(records, create(p)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contiguous(procs: usize, nodes: usize, c: usize, g: usize) -> RunConfig {
        RunConfig {
            workload: WorkloadSpec { block_bytes: 256, ..Default::default() },
            procs,
            nodes,
            local_aggs_per_node: c,
            global_aggs: Some(g),
            stripe_size: 64,
            method: Method::Both,
            ..Default::default()
        }
    }

    #[test]
    fn both_methods_verify_and_tam_sends_less_metadata() {
        let out = run(&contiguous(8, 2, 1, 4)).unwrap();
        assert!(out.verified());
        let tam = &out.runs[0].record.report;
        let tp = &out.runs[1].record.report;
        assert_eq!((tam.method.as_str(), tp.method.as_str()), ("tam", "two_phase"));
        assert!(tam.inter.metadata_messages() <= tp.inter.metadata_messages());
    }

    #[test]
    fn sweep_sender_counts_grow_with_c() {
        let results = sweep(&RunConfig { method: Method::Tam, ..contiguous(16, 2, 1, 2) }, &[1, 2, 4]);
        let senders: Vec<u64> =
            results.iter().map(|r| r.as_ref().unwrap().runs[0].record.report.inter.senders_max).collect();
        assert_eq!(senders.len(), 3);
        assert!(senders.windows(2).all(|w| w[0] < w[1]), "{senders:?}");
    }

    #[test]
    fn degenerate_reports_match_without_labels() {
        let out = run(&contiguous(8, 2, 4, 2)).unwrap();
        let a = out.runs[0].record.report.unlabeled();
        let b = out.runs[1].record.report.unlabeled();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_names_fields() {
        let bad = RunConfig { nodes: 3, ..Default::default() };
        let err = bad.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Field { field: "nodes", .. }));
        let bad = RunConfig { local_aggs_per_node: 9, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ConfigError::Field { field: "local_aggs_per_node", .. })));
        let bad = RunConfig { global_aggs: Some(0), ..Default::default() };
        assert!(matches!(bad.validate(), Err(ConfigError::Field { field: "global_aggs", .. })));
        assert!(RunConfig::from_json(r#"{"procs": 4, "bogus": 1}"#).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = contiguous(8, 2, 2, 4);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let partial = RunConfig::from_json(r#"{"workload": {"kind": "btio", "n": 8}, "procs": 4}"#).unwrap();
        assert_eq!(partial.workload.vars, 40);
        assert_eq!(partial.nodes, 2);
    }

    #[test]
    fn strict_overlap_is_a_config_exit() {
        let err: Error = crate::error::OracleError::Overlap { offset: 0, first: 0, second: 1 }.into();
        assert_eq!(exit_code_for(&err), EXIT_CONFIG);
        let err: Error = PipelineError::RoundDiscipline("x".into()).into();
        assert_eq!(exit_code_for(&err), EXIT_MISMATCH);
    }

    #[test]
    fn tagged_paths() {
        assert_eq!(tagged_path(Path::new("out/t.jsonl"), "tam"), PathBuf::from("out/t-tam.jsonl"));
        assert_eq!(tagged_path(Path::new("dump"), "c2"), PathBuf::from("dump-c2"));
    }
}
