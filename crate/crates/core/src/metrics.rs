//! Measured counters, analytic predictions, and prediction checks.

use serde::{Deserialize, Serialize};

/// Counters for one aggregation layer.
///
/// Everything here merges by addition or max, so partial reports from
/// independent workers combine in any order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub metadata_remote: u64,
    pub metadata_self: u64,
    pub data_remote: u64,
    pub data_self: u64,
    /// Bytes carried by remote messages (metadata and data).
    pub remote_bytes: u64,
    /// Bytes delivered to self without a transfer.
    pub self_bytes: u64,
    /// Data payload bytes, remote plus self.
    pub data_bytes: u64,
    /// Aggregators receiving in this layer.
    pub receivers: u64,
    /// Sum over receivers of distinct senders (self included).
    pub senders_sum: u64,
    pub senders_max: u64,
    /// Extents entering the receivers' merges.
    pub extents_in: u64,
    /// Extents leaving the receivers after coalescing.
    pub extents_out: u64,
    pub max_extents_in_per_aggregator: u64,
    pub merge_comparisons: u64,
    pub max_merge_comparisons: u64,
    /// Sender/receiver pairs that could exchange messages.
    pub potential_pairs: u64,
}

impl PhaseMetrics {
    pub fn merge(&mut self, o: &PhaseMetrics) {
        self.metadata_remote += o.metadata_remote;
        self.metadata_self += o.metadata_self;
        self.data_remote += o.data_remote;
        self.data_self += o.data_self;
        self.remote_bytes += o.remote_bytes;
        self.self_bytes += o.self_bytes;
        self.data_bytes += o.data_bytes;
        self.receivers += o.receivers;
        self.senders_sum += o.senders_sum;
        self.senders_max = self.senders_max.max(o.senders_max);
        self.extents_in += o.extents_in;
        self.extents_out += o.extents_out;
        self.max_extents_in_per_aggregator = self.max_extents_in_per_aggregator.max(o.max_extents_in_per_aggregator);
        self.merge_comparisons += o.merge_comparisons;
        self.max_merge_comparisons = self.max_merge_comparisons.max(o.max_merge_comparisons);
        self.potential_pairs += o.potential_pairs;
    }

    pub fn metadata_messages(&self) -> u64 {
        self.metadata_remote + self.metadata_self
    }

    pub fn mean_senders(&self) -> f64 {
        ratio(self.senders_sum, self.receivers)
    }

    pub fn mean_extents_in(&self) -> f64 {
        ratio(self.extents_in, self.receivers)
    }

    /// Extents in per extent out; 1.0 when nothing passed through.
    pub fn coalesce_ratio(&self) -> f64 {
        if self.extents_out == 0 {
            1.0
        } else {
            self.extents_in as f64 / self.extents_out as f64
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One analytic value and the expression that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    pub name: String,
    pub value: f64,
    pub formula: String,
}

/// Analytic counters for a `(P, P_L, P_G, k)` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub intra_receives_per_local_agg: Predicted,
    pub inter_receives_per_global_agg: Predicted,
    pub two_phase_receives_per_global_agg: Predicted,
    pub max_senders_per_global_agg: Predicted,
    pub intra_sort_work: Predicted,
    pub inter_sort_work: Predicted,
    pub two_phase_sort_work: Predicted,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("prediction needs positive arguments, got {name} = 0")]
pub struct ZeroArgument {
    pub name: &'static str,
}

fn p(name: &str, value: f64, formula: &str) -> Predicted {
    Predicted { name: name.to_owned(), value, formula: formula.to_owned() }
}

/// Evaluates the receive-count and sort-cost expressions with unit
/// constants and base-2 logarithms.
pub fn predict(procs: u64, local: u64, global: u64, k: f64) -> Result<Prediction, ZeroArgument> {
    for (name, v) in [("P", procs), ("P_L", local), ("P_G", global)] {
        if v == 0 {
            return Err(ZeroArgument { name });
        }
    }
    let (pf, lf, gf) = (procs as f64, local as f64, global as f64);
    Ok(Prediction {
        intra_receives_per_local_agg: p("intra_receives_per_local_agg", pf / lf, "P/P_L"),
        inter_receives_per_global_agg: p("inter_receives_per_global_agg", lf / gf, "P_L/P_G"),
        two_phase_receives_per_global_agg: p("two_phase_receives_per_global_agg", pf / gf, "P/P_G"),
        max_senders_per_global_agg: p("max_senders_per_global_agg", lf, "P_L"),
        intra_sort_work: p("intra_sort_work", pf * k / lf * (pf / lf).log2(), "(P*k/P_L)*log2(P/P_L)"),
        inter_sort_work: p("inter_sort_work", pf * k / gf * lf.log2(), "(P*k/P_G)*log2(P_L)"),
        two_phase_sort_work: p("two_phase_sort_work", pf * k / gf * pf.log2(), "(P*k/P_G)*log2(P)"),
    })
}

/// Measured and predicted counters for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub workload: String,
    pub nprocs: u64,
    pub nodes: u64,
    pub procs_per_node: u64,
    pub local_aggs: u64,
    pub global_aggs: u64,
    pub stripe_size: u64,
    pub stripes_per_round: u64,
    pub total_extents: u64,
    pub total_bytes: u64,
    /// Mean extents per process before aggregation.
    pub k: f64,
    pub intra: PhaseMetrics,
    pub inter: PhaseMetrics,
    pub rounds: u64,
    pub bytes_written: u64,
    pub max_round_bytes: u64,
    /// Most sends a single process posts within one phase round.
    pub max_pending_sends: u64,
    pub intra_coalesce_ratio: f64,
    pub inter_coalesce_ratio: f64,
    pub mean_senders_per_local_agg: f64,
    pub mean_senders_per_global_agg: f64,
    pub predicted: Option<Prediction>,
    pub verified: Option<bool>,
}

impl MetricsReport {
    pub fn new(method: &str, workload: &str) -> Self {
        Self {
            method: method.to_owned(),
            workload: workload.to_owned(),
            nprocs: 0,
            nodes: 0,
            procs_per_node: 0,
            local_aggs: 0,
            global_aggs: 0,
            stripe_size: 0,
            stripes_per_round: 0,
            total_extents: 0,
            total_bytes: 0,
            k: 0.0,
            intra: PhaseMetrics::default(),
            inter: PhaseMetrics::default(),
            rounds: 0,
            bytes_written: 0,
            max_round_bytes: 0,
            max_pending_sends: 0,
            intra_coalesce_ratio: 1.0,
            inter_coalesce_ratio: 1.0,
            mean_senders_per_local_agg: 0.0,
            mean_senders_per_global_agg: 0.0,
            predicted: None,
            verified: None,
        }
    }

    /// Folds in a partial report from another worker over the same
    /// configuration. Derived fields are refreshed afterwards.
    pub fn merge(&mut self, o: &MetricsReport) {
        self.total_extents += o.total_extents;
        self.total_bytes += o.total_bytes;
        self.intra.merge(&o.intra);
        self.inter.merge(&o.inter);
        self.rounds = self.rounds.max(o.rounds);
        self.bytes_written += o.bytes_written;
        self.max_round_bytes = self.max_round_bytes.max(o.max_round_bytes);
        self.max_pending_sends = self.max_pending_sends.max(o.max_pending_sends);
        self.verified = match (self.verified, o.verified) {
            (Some(a), Some(b)) => Some(a && b),
            (a, b) => a.or(b),
        };
        self.finalize();
    }

    /// Recomputes the derived fields from the raw counters.
    pub fn finalize(&mut self) {
        self.k = ratio(self.total_extents, self.nprocs);
        self.intra_coalesce_ratio = self.intra.coalesce_ratio();
        self.inter_coalesce_ratio = self.inter.coalesce_ratio();
        self.mean_senders_per_local_agg = self.intra.mean_senders();
        self.mean_senders_per_global_agg = self.inter.mean_senders();
        self.predicted = predict(self.nprocs, self.local_aggs, self.global_aggs, self.k).ok();
    }

    /// Same report with the method label cleared, for comparing runs that
    /// differ only in naming.
    pub fn unlabeled(&self) -> MetricsReport {
        MetricsReport { method: String::new(), ..self.clone() }
    }

    pub const CSV_COLUMNS: [&'static str; 30] = [
        "method",
        "workload",
        "nprocs",
        "nodes",
        "procs_per_node",
        "local_aggs",
        "global_aggs",
        "stripe_size",
        "total_extents",
        "total_bytes",
        "k",
        "intra_metadata_remote",
        "intra_data_remote",
        "intra_self",
        "intra_remote_bytes",
        "intra_senders_max",
        "intra_extents_in",
        "intra_extents_out",
        "intra_merge_comparisons",
        "inter_metadata_remote",
        "inter_metadata_self",
        "inter_data_remote",
        "inter_remote_bytes",
        "inter_senders_max",
        "inter_potential_pairs",
        "inter_extents_in",
        "inter_extents_out",
        "inter_merge_comparisons",
        "rounds",
        "verified",
    ];

    /// One CSV row in `CSV_COLUMNS` order.
    pub fn csv_row(&self) -> Vec<String> {
        let verified = match self.verified {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        vec![
            self.method.clone(),
            self.workload.clone(),
            self.nprocs.to_string(),
            self.nodes.to_string(),
            self.procs_per_node.to_string(),
            self.local_aggs.to_string(),
            self.global_aggs.to_string(),
            self.stripe_size.to_string(),
            self.total_extents.to_string(),
            self.total_bytes.to_string(),
            format!("{:.6}", self.k),
            self.intra.metadata_remote.to_string(),
            self.intra.data_remote.to_string(),
            (self.intra.metadata_self + self.intra.data_self).to_string(),
            self.intra.remote_bytes.to_string(),
            self.intra.senders_max.to_string(),
            self.intra.extents_in.to_string(),
            self.intra.extents_out.to_string(),
            self.intra.merge_comparisons.to_string(),
            self.inter.metadata_remote.to_string(),
            self.inter.metadata_self.to_string(),
            self.inter.data_remote.to_string(),
            self.inter.remote_bytes.to_string(),
            self.inter.senders_max.to_string(),
            self.inter.potential_pairs.to_string(),
            self.inter.extents_in.to_string(),
            self.inter.extents_out.to_string(),
            self.inter.merge_comparisons.to_string(),
            self.rounds.to_string(),
            verified.to_owned(),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Exact,
    UpperBound,
    Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub counter: String,
    pub measured: f64,
    pub predicted: f64,
    pub kind: VerdictKind,
    pub pass: bool,
}

/// Largest accepted measured/surrogate ratio for comparison counts.
pub const SORT_RATIO_LIMIT: f64 = 2.0;

/// Compares measured counters against the analytic ones.
///
/// Count predictions must match exactly when every possible sender/receiver
/// pair exchanged data, and bound the measurement otherwise. Merge
/// comparison counts are checked against the sort-work surrogates by ratio.
pub fn check(measured: &MetricsReport, predicted: &Prediction) -> Vec<Verdict> {
    let mut out = Vec::new();
    let two_phase = measured.local_aggs == measured.nprocs;

    if !two_phase && measured.intra.receivers > 0 {
        let v = measured.intra.mean_senders();
        let want = predicted.intra_receives_per_local_agg.value;
        out.push(Verdict {
            counter: "mean_senders_per_local_agg".into(),
            measured: v,
            predicted: want,
            kind: VerdictKind::Exact,
            pass: (v - want).abs() < 1e-9,
        });
    }

    let full = measured.inter.metadata_messages() == measured.inter.potential_pairs;
    let senders = measured.inter.senders_max as f64;
    let bound = predicted.max_senders_per_global_agg.value;
    out.push(Verdict {
        counter: "max_senders_per_global_agg".into(),
        measured: senders,
        predicted: bound,
        kind: if full { VerdictKind::Exact } else { VerdictKind::UpperBound },
        pass: if full { senders == bound } else { senders <= bound },
    });

    let ratio_verdict = |name: &str, measured: u64, surrogate: f64| {
        let m = measured as f64;
        let r = if surrogate > 0.0 {
            m / surrogate
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Verdict {
            counter: name.to_owned(),
            measured: m,
            predicted: surrogate,
            kind: VerdictKind::Ratio,
            pass: r <= SORT_RATIO_LIMIT,
        }
    };
    if !two_phase {
        out.push(ratio_verdict(
            "intra_max_merge_comparisons",
            measured.intra.max_merge_comparisons,
            predicted.intra_sort_work.value,
        ));
    }
    let inter_surrogate = if two_phase { predicted.two_phase_sort_work.value } else { predicted.inter_sort_work.value };
    out.push(ratio_verdict("inter_max_merge_comparisons", measured.inter.max_merge_comparisons, inter_surrogate));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn predict_theta_configuration() {
        let p = predict(16384, 256, 56, 1.0).unwrap();
        assert_eq!(p.intra_receives_per_local_agg.value, 64.0);
        assert!((p.inter_receives_per_global_agg.value - 4.5714).abs() < 1e-3);
        assert!((p.two_phase_receives_per_global_agg.value - 292.571).abs() < 1e-3);
    }

    #[test]
    fn predict_degenerate_case() {
        let p = predict(64, 64, 4, 3.0).unwrap();
        assert_eq!(p.intra_receives_per_local_agg.value, 1.0);
        assert_eq!(p.inter_receives_per_global_agg.value, p.two_phase_receives_per_global_agg.value);
        assert_eq!(p.inter_sort_work.value, p.two_phase_sort_work.value);
        assert_eq!(p.intra_sort_work.value, 0.0);
    }

    #[test]
    fn predict_small_sort_surrogate() {
        // (8 * 10 / 4) * log2(8 / 4) = 20
        let p = predict(8, 4, 2, 10.0).unwrap();
        assert_eq!(p.intra_sort_work.value, 20.0);
        assert_eq!(p.intra_sort_work.formula, "(P*k/P_L)*log2(P/P_L)");
    }

    #[test]
    fn predict_rejects_zero() {
        assert_eq!(predict(8, 0, 2, 1.0), Err(ZeroArgument { name: "P_L" }));
    }

    fn report(senders_max: u64, messages: u64, pairs: u64, comparisons: u64) -> MetricsReport {
        let mut r = MetricsReport::new("tam", "test");
        r.nprocs = 64;
        r.local_aggs = 8;
        r.global_aggs = 4;
        r.total_extents = 64;
        r.inter.senders_max = senders_max;
        r.inter.metadata_remote = messages;
        r.inter.potential_pairs = pairs;
        r.inter.max_merge_comparisons = comparisons;
        r.finalize();
        r
    }

    #[test]
    fn check_exact_and_bound() {
        let r = report(8, 32, 32, 10);
        let v = check(&r, r.predicted.as_ref().unwrap());
        let senders = v.iter().find(|v| v.counter == "max_senders_per_global_agg").unwrap();
        assert_eq!(senders.kind, VerdictKind::Exact);
        assert!(senders.pass);

        let sparse = report(5, 20, 32, 10);
        let v = check(&sparse, sparse.predicted.as_ref().unwrap());
        let senders = v.iter().find(|v| v.counter == "max_senders_per_global_agg").unwrap();
        assert_eq!(senders.kind, VerdictKind::UpperBound);
        assert!(senders.pass);
    }

    #[test]
    fn check_sort_ratio() {
        // surrogate: (64*1/4)*log2(8) = 48
        let ok = report(8, 32, 32, 96);
        let v = check(&ok, ok.predicted.as_ref().unwrap());
        assert!(v.iter().find(|v| v.counter == "inter_max_merge_comparisons").unwrap().pass);
        let bad = report(8, 32, 32, 97);
        let v = check(&bad, bad.predicted.as_ref().unwrap());
        assert!(!v.iter().find(|v| v.counter == "inter_max_merge_comparisons").unwrap().pass);
    }

    #[test]
    fn csv_row_matches_columns() {
        let r = report(1, 1, 1, 1);
        assert_eq!(r.csv_row().len(), MetricsReport::CSV_COLUMNS.len());
    }

    fn phase() -> impl Strategy<Value = PhaseMetrics> {
        prop::collection::vec(0u64..1000, 16).prop_map(|v| PhaseMetrics {
            metadata_remote: v[0],
            metadata_self: v[1],
            data_remote: v[2],
            data_self: v[3],
            remote_bytes: v[4],
            self_bytes: v[5],
            data_bytes: v[6],
            receivers: v[7],
            senders_sum: v[8],
            senders_max: v[9],
            extents_in: v[10],
            extents_out: v[11],
            max_extents_in_per_aggregator: v[12],
            merge_comparisons: v[13],
            max_merge_comparisons: v[14],
            potential_pairs: v[15],
        })
    }

    proptest! {
        #[test]
        fn phase_merge_is_associative_and_commutative(a in phase(), b in phase(), c in phase()) {
            let mut ab = a.clone();
            ab.merge(&b);
            let mut ba = b.clone();
            ba.merge(&a);
            prop_assert_eq!(&ab, &ba);
            let mut ab_c = ab.clone();
            ab_c.merge(&c);
            let mut bc = b.clone();
            bc.merge(&c);
            let mut a_bc = a.clone();
            a_bc.merge(&bc);
            prop_assert_eq!(ab_c, a_bc);
        }
    }
}
