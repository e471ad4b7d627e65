use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tamsim::error::ConfigError;
use tamsim::run::{
    exit_code_for, run, sweep, write_artifacts, write_csv, write_reports, ReportDocument, RunConfig, RunRecord,
    EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK,
};
use tamsim::Error;

#[derive(Parser)]
#[command(name = "tamsim", version, about = "Simulate two-layer collective write aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and verify it against the serial writer.
    Run(RunArgs),
    /// Run the configuration once per `--local-aggs-per-node` value
    /// (default 1,2,4).
    Sweep(RunArgs),
    /// Summarise saved JSON reports.
    Report {
        /// Report files written by `run` or `sweep`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write all runs as CSV here instead of a table on stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// contiguous1d, btio, s3d or decomp_file.
    #[arg(long)]
    workload: Option<String>,
    /// Grid edge for btio and s3d.
    #[arg(long)]
    n: Option<usize>,
    /// Bytes per process for contiguous1d.
    #[arg(long)]
    block_bytes: Option<u64>,
    /// Variable count for btio.
    #[arg(long)]
    vars: Option<usize>,
    #[arg(long)]
    px: Option<usize>,
    #[arg(long)]
    py: Option<usize>,
    #[arg(long)]
    pz: Option<usize>,
    /// Decomposition file for decomp_file; bundled fixture when absent.
    #[arg(long)]
    decomp: Option<PathBuf>,
    #[arg(long)]
    procs: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Local aggregators per node; a comma-separated list for sweep.
    #[arg(long, value_delimiter = ',')]
    local_aggs_per_node: Vec<usize>,
    /// Global aggregator count; stripe count when absent.
    #[arg(long)]
    global_aggs: Option<usize>,
    #[arg(long)]
    stripe_size: Option<u64>,
    #[arg(long)]
    stripe_count: Option<usize>,
    #[arg(long)]
    stripes_per_round: Option<usize>,
    /// spread_even or round_robin_across_nodes.
    #[arg(long)]
    global_policy: Option<String>,
    /// lowest or highest.
    #[arg(long)]
    local_pick: Option<String>,
    /// strict or last_writer.
    #[arg(long)]
    overlap_policy: Option<String>,
    /// tam, two_phase or both.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, overrides_with = "no_verify")]
    verify: bool,
    #[arg(long, overrides_with = "verify")]
    no_verify: bool,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Message trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Final file image in sidecar format.
    #[arg(long)]
    dump_file: Option<PathBuf>,
}

/// Parses a value through its serde name, accepting `-` for `_`.
fn named<T: DeserializeOwned>(field: &'static str, s: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| ConfigError::field(field, format!("unknown value `{s}`")))
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(w) = &self.workload {
            c.workload.kind = named("workload", w)?;
        }
        let w = &mut c.workload;
        w.n = self.n.unwrap_or(w.n);
        w.block_bytes = self.block_bytes.unwrap_or(w.block_bytes);
        w.vars = self.vars.unwrap_or(w.vars);
        match (self.px, self.py, self.pz) {
            (None, None, None) => {}
            (Some(px), Some(py), Some(pz)) => w.grid = Some((px, py, pz)),
            _ => return Err(ConfigError::field("workload.grid", "--px, --py and --pz go together")),
        }
        if self.decomp.is_some() {
            w.decomp = self.decomp.clone();
        }
        c.procs = self.procs.unwrap_or(c.procs);
        c.nodes = self.nodes.unwrap_or(c.nodes);
        if let Some(&first) = self.local_aggs_per_node.first() {
            c.local_aggs_per_node = first;
        }
        if self.global_aggs.is_some() {
            c.global_aggs = self.global_aggs;
        }
        c.stripe_size = self.stripe_size.unwrap_or(c.stripe_size);
        c.stripe_count = self.stripe_count.unwrap_or(c.stripe_count);
        c.stripes_per_round = self.stripes_per_round.unwrap_or(c.stripes_per_round);
        if let Some(s) = &self.global_policy {
            c.global_policy = named("global_policy", s)?;
        }
        if let Some(s) = &self.local_pick {
            c.local_pick = named("local_pick", s)?;
        }
        if let Some(s) = &self.overlap_policy {
            c.overlap_policy = named("overlap_policy", s)?;
        }
        if let Some(s) = &self.method {
            c.method = named("method", s)?;
        }
        c.seed = self.seed.unwrap_or(c.seed);
        if self.verify {
            c.verify = true;
        }
        if self.no_verify {
            c.verify = false;
        }
        let o = &mut c.output;
        for (dst, src) in [
            (&mut o.report, &self.out),
            (&mut o.csv, &self.csv),
            (&mut o.trace, &self.trace),
            (&mut o.dump, &self.dump_file),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        Ok(c)
    }
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

fn cmd_run(args: &RunArgs) -> i32 {
    if args.local_aggs_per_node.len() > 1 {
        return fail(&ConfigError::field("local_aggs_per_node", "run takes one value; use sweep for a list").into());
    }
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let written = write_artifacts(&outcome, "")
        .and_then(|_| write_reports(&outcome.document(), &outcome.records(), &cfg.output, &mut io::stdout()));
    if let Err(e) = written {
        return fail(&e);
    }
    for r in &outcome.runs {
        if let Some(d) = &r.record.divergence {
            eprintln!(
                "{}: image differs from oracle at offset {} (pipeline {:?}, oracle {:?})",
                r.method.name(),
                d.offset,
                d.pipeline,
                d.oracle
            );
        }
    }
    outcome.exit_code()
}

fn cmd_sweep(args: &RunArgs) -> i32 {
    let base = match args.config() {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    let counts = if args.local_aggs_per_node.is_empty() { vec![1, 2, 4] } else { args.local_aggs_per_node.clone() };
    let mut docs = Vec::new();
    let mut code = EXIT_OK;
    for (c, res) in counts.iter().zip(sweep(&base, &counts)) {
        match res {
            Ok(outcome) => {
                if let Err(e) = write_artifacts(&outcome, &format!("c{c}")) {
                    code = code.max(fail(&e));
                }
                if !outcome.verified() {
                    eprintln!("local_aggs_per_node={c}: image differs from oracle");
                    code = code.max(EXIT_MISMATCH);
                }
                docs.push(outcome.document());
            }
            Err(e) => {
                eprintln!("local_aggs_per_node={c}:");
                code = code.max(fail(&e));
            }
        }
    }
    let records: Vec<RunRecord> = docs.iter().flat_map(|d| d.runs.iter().cloned()).collect();
    if let Err(e) = write_reports(&docs, &records, &base.output, &mut io::stdout()) {
        code = code.max(fail(&e));
    }
    code
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum Saved {
    One(Box<ReportDocument>),
    Many(Vec<ReportDocument>),
}

fn cmd_report(files: &[PathBuf], csv: Option<&PathBuf>) -> i32 {
    let mut records = Vec::new();
    for f in files {
        let text = match std::fs::read_to_string(f) {
            Ok(t) => t,
            Err(source) => return fail(&ConfigError::Io { path: f.display().to_string(), source }.into()),
        };
        match serde_json::from_str::<Saved>(&text) {
            Ok(Saved::One(d)) => records.extend(d.runs),
            Ok(Saved::Many(ds)) => records.extend(ds.into_iter().flat_map(|d| d.runs)),
            Err(e) => return fail(&ConfigError::from(e).into()),
        }
    }
    let res = match csv {
        Some(p) => std::fs::File::create(p).map_err(Error::from).and_then(|f| write_csv(&records, f)),
        None => print_table(&records, &mut io::stdout()).map_err(Error::from),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

fn print_table(records: &[RunRecord], out: &mut dyn Write) -> io::Result<()> {
    writeln!(
        out,
        "{:<10} {:<28} {:>6} {:>5} {:>5} {:>9} {:>9} {:>9} {:>8}",
        "method", "workload", "P", "P_L", "P_G", "senders", "intra_k", "checks", "verified"
    )?;
    for r in records {
        let m = &r.report;
        let passed = r.checks.iter().filter(|v| v.pass).count();
        let verified = match m.verified {
            Some(true) => "yes",
            Some(false) => "NO",
            None => "-",
        };
        writeln!(
            out,
            "{:<10} {:<28} {:>6} {:>5} {:>5} {:>9} {:>9.2} {:>9} {:>8}",
            m.method,
            m.workload,
            m.nprocs,
            m.local_aggs,
            m.global_aggs,
            m.inter.senders_max,
            m.intra.mean_extents_in(),
            format!("{passed}/{}", r.checks.len()),
            verified
        )?;
    }
    out.flush()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report { files, csv } => cmd_report(files, csv.as_ref()),
    };
    debug_assert!([EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG].contains(&code));
    ExitCode::from(code as u8)
}
