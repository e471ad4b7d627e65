//! Two-layer collective write: intra-node aggregation to local
//! aggregators, inter-node exchange to global aggregators, then the
//! round-based write. Classic two-phase I/O is the same pipeline with every
//! process acting as its own local aggregator, in which case the intra-node
//! layer is skipped.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{coalesce, heap_merge, resolve_overlaps, split_by_domain, tag_list, CoalescedList, TaggedExtent};
use crate::error::PipelineError;
use crate::io_phase::{
    build_placement_map, execute_write, plan_rounds, DataMessages, MessageIndex, OverlapPolicy, PlacementMap,
    RoundPlan, WriteStats,
};
use crate::metrics::{MetricsReport, PhaseMetrics};
use crate::model::{AggregatorLayout, FileDomainMap, ProcRequest, Rank};
use crate::simfile::SimFile;

/// Bytes per offset-length pair in a metadata message.
pub const PAIR_BYTES: u64 = 16;
/// Count header on every metadata message.
pub const HEADER_BYTES: u64 = 8;

pub fn metadata_bytes(pairs: usize) -> u64 {
    HEADER_BYTES + PAIR_BYTES * pairs as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Intra,
    Inter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Metadata,
    Data,
}

/// One point-to-point transfer. `src == dst` marks a self-delivery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub src: Rank,
    pub dst: Rank,
    pub kind: MessageKind,
    pub bytes: u64,
    pub phase: Phase,
    pub round: usize,
}

impl Message {
    pub fn is_self(&self) -> bool {
        self.src == self.dst
    }

    fn sort_key(&self) -> (Phase, usize, Rank, Rank, MessageKind) {
        (self.phase, self.round, self.src, self.dst, self.kind)
    }
}

/// Canonical trace order: phase, round, source, destination, kind.
pub fn sort_trace(trace: &mut [Message]) {
    trace.sort_by_key(Message::sort_key);
}

/// Writes one JSON object per message.
pub fn write_trace_jsonl<W: Write>(trace: &[Message], mut w: W) -> std::io::Result<()> {
    for m in trace {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineOptions {
    pub overlap: OverlapPolicy,
    pub stripes_per_round: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { overlap: OverlapPolicy::Strict, stripes_per_round: 1 }
    }
}

/// A local aggregator after gathering: its coalesced extents and the data
/// buffer holding them back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalAggregate {
    pub rank: Rank,
    pub list: CoalescedList,
    pub buffer: Vec<u8>,
    /// Extents received before merging.
    pub extents_in: usize,
    pub senders: usize,
    pub comparisons: u64,
}

#[derive(Clone, Debug, Default)]
pub struct IntraOutput {
    pub aggregates: Vec<LocalAggregate>,
    pub messages: Vec<Message>,
    pub metrics: PhaseMetrics,
}

fn check_ranks(procs: &[ProcRequest], nprocs: usize) -> Result<(), PipelineError> {
    if procs.len() != nprocs || procs.iter().enumerate().any(|(i, p)| p.rank != i) {
        return Err(PipelineError::RankMismatch { expected: nprocs, found: procs.len() });
    }
    Ok(())
}

fn gather_buffer(list: &CoalescedList, streams: &BTreeMap<Rank, Vec<u8>>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(list.total_bytes() as usize);
    for seg in list.segments() {
        let s = &streams[&seg.source.rank];
        buf.extend_from_slice(&s[seg.stream_pos as usize..(seg.stream_pos + seg.length) as usize]);
    }
    buf
}

fn merge_and_coalesce(
    lists: Vec<Vec<TaggedExtent>>,
    policy: OverlapPolicy,
) -> Result<(CoalescedList, u64), PipelineError> {
    let merged = heap_merge(lists)?;
    let list = match policy {
        OverlapPolicy::Strict => coalesce(&merged.items)?,
        OverlapPolicy::LastWriter => coalesce(&resolve_overlaps(&merged.items))?,
    };
    Ok((list, merged.comparisons))
}

/// Gathers the requests of one node's processes at their local
/// aggregators. `procs` is indexed by global rank.
pub fn intra_node_aggregate(
    procs: &[ProcRequest],
    node: usize,
    layout: &AggregatorLayout,
    policy: OverlapPolicy,
) -> Result<IntraOutput, PipelineError> {
    let topo = layout.topology();
    let mut out = IntraOutput::default();
    for &agg in layout.local_aggs().iter().filter(|&&a| a / topo.procs_per_node() == node) {
        let members = layout.members(agg);
        let mut lists = Vec::with_capacity(members.len());
        let mut streams = BTreeMap::new();
        let mut extents_in = 0;
        for &m in &members {
            let req = &procs[m];
            extents_in += req.extents().len();
            let meta = Message {
                src: m,
                dst: agg,
                kind: MessageKind::Metadata,
                bytes: metadata_bytes(req.extents().len()),
                phase: Phase::Intra,
                round: 0,
            };
            out.messages.push(meta);
            let data = Message { kind: MessageKind::Data, bytes: req.total_bytes(), ..meta };
            if data.bytes > 0 {
                out.messages.push(data);
            }
            if m == agg {
                out.metrics.metadata_self += 1;
                out.metrics.self_bytes += meta.bytes + data.bytes;
                out.metrics.data_self += u64::from(data.bytes > 0);
            } else {
                out.metrics.metadata_remote += 1;
                out.metrics.remote_bytes += meta.bytes + data.bytes;
                out.metrics.data_remote += u64::from(data.bytes > 0);
            }
            out.metrics.data_bytes += data.bytes;
            lists.push(tag_list(m, req.extents()));
            streams.insert(m, req.materialize());
        }
        let (list, comparisons) = merge_and_coalesce(lists, policy)?;
        let buffer = gather_buffer(&list, &streams);

        let m = &mut out.metrics;
        m.receivers += 1;
        m.senders_sum += members.len() as u64;
        m.senders_max = m.senders_max.max(members.len() as u64);
        m.potential_pairs += members.len() as u64;
        m.extents_in += extents_in as u64;
        m.extents_out += list.len() as u64;
        m.max_extents_in_per_aggregator = m.max_extents_in_per_aggregator.max(extents_in as u64);
        m.merge_comparisons += comparisons;
        m.max_merge_comparisons = m.max_merge_comparisons.max(comparisons);
        out.aggregates.push(LocalAggregate {
            rank: agg,
            list,
            buffer,
            extents_in,
            senders: members.len(),
            comparisons,
        });
    }
    Ok(out)
}

/// Intra-node layer skipped: every process stands in for its own local
/// aggregator with its own request list.
fn self_aggregates(procs: &[ProcRequest]) -> Result<Vec<LocalAggregate>, PipelineError> {
    procs
        .iter()
        .map(|p| {
            let list = coalesce(&tag_list(p.rank, p.extents()))?;
            let streams = BTreeMap::from([(p.rank, p.materialize())]);
            let buffer = gather_buffer(&list, &streams);
            Ok(LocalAggregate { rank: p.rank, list, buffer, extents_in: p.extents().len(), senders: 1, comparisons: 0 })
        })
        .collect()
}

/// A global aggregator after the exchange.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalAggregate {
    pub index: usize,
    pub rank: Rank,
    pub list: CoalescedList,
    pub senders: usize,
    pub fragments_in: usize,
    pub comparisons: u64,
}

#[derive(Clone, Debug, Default)]
pub struct InterOutput {
    pub aggregates: Vec<GlobalAggregate>,
    /// `fragments[i][g]`: what local aggregate `i` sends to global index `g`.
    pub fragments: Vec<Vec<Vec<TaggedExtent>>>,
    pub messages: Vec<Message>,
    pub metrics: PhaseMetrics,
}

/// Splits each local aggregate by file domain, exchanges metadata, and
/// merges what every global aggregator receives.
pub fn inter_node_exchange(
    locals: &[LocalAggregate],
    layout: &AggregatorLayout,
    domains: &FileDomainMap,
    policy: OverlapPolicy,
) -> Result<InterOutput, PipelineError> {
    if layout.num_global() != domains.num_global {
        return Err(PipelineError::DomainMismatch { layout: layout.num_global(), domains: domains.num_global });
    }
    let globals = layout.global_aggs();
    let mut out = InterOutput::default();
    out.metrics.potential_pairs = (locals.len() * globals.len()) as u64;
    for la in locals {
        let parts = split_by_domain(&la.list, la.rank, domains);
        for (g, part) in parts.iter().enumerate() {
            if part.is_empty() {
                continue;
            }
            let msg = Message {
                src: la.rank,
                dst: globals[g],
                kind: MessageKind::Metadata,
                bytes: metadata_bytes(part.len()),
                phase: Phase::Inter,
                round: 0,
            };
            if msg.is_self() {
                out.metrics.metadata_self += 1;
                out.metrics.self_bytes += msg.bytes;
            } else {
                out.metrics.metadata_remote += 1;
                out.metrics.remote_bytes += msg.bytes;
            }
            out.messages.push(msg);
        }
        out.fragments.push(parts);
    }

    for (g, &rank) in globals.iter().enumerate() {
        let incoming: Vec<Vec<TaggedExtent>> =
            out.fragments.iter().map(|parts| parts[g].clone()).filter(|p| !p.is_empty()).collect();
        let senders = incoming.len();
        let fragments_in = incoming.iter().map(Vec::len).sum();
        let (list, comparisons) = merge_and_coalesce(incoming, policy)?;
        let m = &mut out.metrics;
        m.receivers += 1;
        m.senders_sum += senders as u64;
        m.senders_max = m.senders_max.max(senders as u64);
        m.extents_in += fragments_in as u64;
        m.extents_out += list.len() as u64;
        m.max_extents_in_per_aggregator = m.max_extents_in_per_aggregator.max(fragments_in as u64);
        m.merge_comparisons += comparisons;
        m.max_merge_comparisons = m.max_merge_comparisons.max(comparisons);
        out.aggregates.push(GlobalAggregate { index: g, rank, list, senders, fragments_in, comparisons });
    }
    Ok(out)
}

/// Round data messages and the index locating each sent fragment.
struct RoundTraffic {
    payloads: DataMessages,
    /// Keyed by `(aggregator index, round)`.
    index: BTreeMap<(usize, usize), MessageIndex>,
    messages: Vec<Message>,
}

fn round_traffic(
    locals: &[LocalAggregate],
    inter: &InterOutput,
    plan: &RoundPlan,
    layout: &AggregatorLayout,
    stripe_size: u64,
) -> RoundTraffic {
    let mut t = RoundTraffic { payloads: DataMessages::new(), index: BTreeMap::new(), messages: Vec::new() };
    for (la, parts) in locals.iter().zip(&inter.fragments) {
        for (g, part) in parts.iter().enumerate() {
            for frag in part {
                let stripe = frag.offset() / stripe_size;
                let round = plan.round_of(g, stripe).expect("every sent stripe is planned");
                let payload = t.payloads.entry((round, la.rank, g)).or_default();
                let msg_off = payload.len() as u64;
                let (start, len) = (frag.stream_pos as usize, frag.extent.length as usize);
                payload.extend_from_slice(&la.buffer[start..start + len]);
                t.index.entry((g, round)).or_default().entry(la.rank).or_default().push((
                    frag.stream_pos,
                    frag.extent.length,
                    msg_off,
                ));
            }
        }
    }
    let globals = layout.global_aggs();
    for (&(round, src, g), payload) in &t.payloads {
        t.messages.push(Message {
            src,
            dst: globals[g],
            kind: MessageKind::Data,
            bytes: payload.len() as u64,
            phase: Phase::Inter,
            round,
        });
    }
    t
}

/// Everything a pipeline run produces.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub trace: Vec<Message>,
    pub file: SimFile,
    pub plan: RoundPlan,
    pub placement: Vec<Vec<PlacementMap>>,
    /// Inter-node data payloads keyed by `(round, local aggregator, global index)`.
    pub payloads: DataMessages,
    pub write: WriteStats,
    pub intra: PhaseMetrics,
    pub inter: PhaseMetrics,
    pub local_aggregates: Vec<LocalAggregate>,
    pub global_aggregates: Vec<GlobalAggregate>,
}

impl PipelineRun {
    /// Most messages any process posts within one (phase, round).
    pub fn max_pending_sends(&self) -> u64 {
        let mut counts: BTreeMap<(Phase, usize, Rank), u64> = BTreeMap::new();
        for m in self.trace.iter().filter(|m| !m.is_self()) {
            *counts.entry((m.phase, m.round, m.src)).or_default() += 1;
        }
        counts.into_values().max().unwrap_or(0)
    }

    /// Fills a metrics report from this run.
    pub fn report(
        &self,
        method: &str,
        workload: &str,
        procs: &[ProcRequest],
        layout: &AggregatorLayout,
        domains: &FileDomainMap,
    ) -> MetricsReport {
        let topo = layout.topology();
        let mut r = MetricsReport::new(method, workload);
        r.nprocs = topo.nprocs() as u64;
        r.nodes = topo.num_nodes() as u64;
        r.procs_per_node = topo.procs_per_node() as u64;
        r.local_aggs = layout.num_local() as u64;
        r.global_aggs = layout.num_global() as u64;
        r.stripe_size = domains.stripe.stripe_size;
        r.stripes_per_round = self.plan.stripes_per_round as u64;
        r.total_extents = procs.iter().map(|p| p.extents().len() as u64).sum();
        r.total_bytes = procs.iter().map(ProcRequest::total_bytes).sum();
        r.intra = self.intra.clone();
        r.inter = self.inter.clone();
        r.rounds = self.write.rounds as u64;
        r.bytes_written = self.write.bytes_written;
        r.max_round_bytes = self.write.max_aggregator_round_bytes;
        r.max_pending_sends = self.max_pending_sends();
        r.finalize();
        r
    }
}

/// Runs the two-layer pipeline. With every process a local aggregator the
/// intra-node layer is skipped.
pub fn run_tam(
    procs: &[ProcRequest],
    layout: &AggregatorLayout,
    domains: &FileDomainMap,
    opts: PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let topo = layout.topology();
    check_ranks(procs, topo.nprocs())?;

    let (locals, intra_msgs, intra) = if layout.is_degenerate() {
        (self_aggregates(procs)?, Vec::new(), PhaseMetrics::default())
    } else {
        let mut locals = Vec::with_capacity(layout.num_local());
        let mut msgs = Vec::new();
        let mut metrics = PhaseMetrics::default();
        for node in 0..topo.num_nodes() {
            let out = intra_node_aggregate(procs, node, layout, opts.overlap)?;
            locals.extend(out.aggregates);
            msgs.extend(out.messages);
            metrics.merge(&out.metrics);
        }
        (locals, msgs, metrics)
    };

    let mut inter = inter_node_exchange(&locals, layout, domains, opts.overlap)?;
    let ga_lists: Vec<CoalescedList> = inter.aggregates.iter().map(|g| g.list.clone()).collect();
    let plan = plan_rounds(&ga_lists, domains, opts.stripes_per_round)?;
    let traffic = round_traffic(&locals, &inter, &plan, layout, domains.stripe.stripe_size);

    let empty = MessageIndex::new();
    let placement: Vec<Vec<PlacementMap>> = plan
        .per_aggregator
        .iter()
        .enumerate()
        .map(|(g, slots)| {
            slots
                .iter()
                .map(|slot| build_placement_map(g, slot, traffic.index.get(&(g, slot.round)).unwrap_or(&empty)))
                .collect()
        })
        .collect();

    let mut file = SimFile::new();
    let write = execute_write(&plan, domains, &placement, &traffic.payloads, &mut file, opts.overlap)?;

    for m in &traffic.messages {
        if m.is_self() {
            inter.metrics.data_self += 1;
            inter.metrics.self_bytes += m.bytes;
        } else {
            inter.metrics.data_remote += 1;
            inter.metrics.remote_bytes += m.bytes;
        }
        inter.metrics.data_bytes += m.bytes;
    }

    let mut trace = intra_msgs;
    trace.extend(inter.messages);
    trace.extend(traffic.messages);
    sort_trace(&mut trace);

    Ok(PipelineRun {
        trace,
        file,
        plan,
        placement,
        payloads: traffic.payloads,
        write,
        intra,
        inter: inter.metrics,
        local_aggregates: locals,
        global_aggregates: inter.aggregates,
    })
}

/// Classic two-phase I/O: requires a layout in which every process is a
/// local aggregator.
pub fn run_two_phase(
    procs: &[ProcRequest],
    layout: &AggregatorLayout,
    domains: &FileDomainMap,
    opts: PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    if !layout.is_degenerate() {
        return Err(PipelineError::NotDegenerate { local: layout.num_local(), nprocs: layout.topology().nprocs() });
    }
    run_tam(procs, layout, domains, opts)
}
