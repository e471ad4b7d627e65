//! Round-based write of aggregated data into the striped file.
//!
//! Each global aggregator walks the stripes it owns in ascending order and
//! writes at most `stripes_per_round` of them per round (one by default),
//! so no round ever writes more than that many stripes' worth of bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::{CoalescedExtent, CoalescedList, Segment};
use crate::error::PipelineError;
use crate::model::{FileDomainMap, OffsetLength, Rank};
use crate::simfile::SimFile;

/// What to do when two origins write the same byte.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    #[default]
    Strict,
    /// The copy from the higher origin rank survives.
    LastWriter,
}

/// The extents one aggregator writes in one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundSlot {
    pub round: usize,
    /// Accessed stripes covered by this round, ascending.
    pub stripes: Vec<u64>,
    /// Extents cut at stripe boundaries, in file order.
    pub extents: Vec<CoalescedExtent>,
}

impl RoundSlot {
    pub fn bytes(&self) -> u64 {
        self.extents.iter().map(|e| e.extent.length).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundPlan {
    pub stripe_size: u64,
    pub stripes_per_round: usize,
    /// Indexed by global aggregator index.
    pub per_aggregator: Vec<Vec<RoundSlot>>,
}

impl RoundPlan {
    /// Maximum over aggregators of their round counts.
    pub fn num_rounds(&self) -> usize {
        self.per_aggregator.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn slot(&self, aggregator: usize, round: usize) -> Option<&RoundSlot> {
        self.per_aggregator.get(aggregator)?.get(round)
    }

    /// Round index that carries `stripe` for `aggregator`.
    pub fn round_of(&self, aggregator: usize, stripe: u64) -> Option<usize> {
        let slots = &self.per_aggregator[aggregator];
        slots
            .binary_search_by(|s| {
                if s.stripes.last().is_some_and(|&l| l < stripe) {
                    std::cmp::Ordering::Less
                } else if s.stripes.first().is_some_and(|&f| f > stripe) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .ok()
            .filter(|&r| slots[r].stripes.binary_search(&stripe).is_ok())
    }

    pub fn max_round_bytes(&self) -> u64 {
        self.per_aggregator.iter().flatten().map(RoundSlot::bytes).max().unwrap_or(0)
    }
}

/// Cuts a coalesced extent at stripe boundaries, splitting its segments to
/// match. Returns `(stripe, piece)` pairs in file order.
fn cut_at_stripes(ce: &CoalescedExtent, stripe_size: u64) -> Vec<(u64, CoalescedExtent)> {
    let mut out: Vec<(u64, CoalescedExtent)> = Vec::new();
    let mut at = ce.extent.offset;
    for seg in &ce.segments {
        let mut done = 0;
        while done < seg.length {
            let stripe = at / stripe_size;
            let stripe_end = (stripe + 1) * stripe_size;
            let take = (seg.length - done).min(stripe_end - at);
            let piece = Segment { source: seg.source, stream_pos: seg.stream_pos + done, length: take };
            match out.last_mut() {
                Some((s, cur)) if *s == stripe => {
                    cur.extent.length += take;
                    cur.segments.push(piece);
                }
                _ => out.push((
                    stripe,
                    CoalescedExtent { extent: OffsetLength { offset: at, length: take }, segments: vec![piece] },
                )),
            }
            at += take;
            done += take;
        }
    }
    out
}

/// Groups each aggregator's merged extents into rounds. Round `r` of an
/// aggregator covers its accessed stripes `r * w .. (r + 1) * w` in
/// ascending order, where `w` is `stripes_per_round`.
pub fn plan_rounds(
    lists: &[CoalescedList],
    domains: &FileDomainMap,
    stripes_per_round: usize,
) -> Result<RoundPlan, PipelineError> {
    if stripes_per_round == 0 {
        return Err(PipelineError::ZeroRoundWidth);
    }
    let size = domains.stripe.stripe_size;
    let per_aggregator = lists
        .iter()
        .map(|list| {
            let mut by_stripe: Vec<(u64, CoalescedExtent)> =
                list.extents.iter().flat_map(|ce| cut_at_stripes(ce, size)).collect();
            // already in file order, hence in stripe order
            let mut slots: Vec<RoundSlot> = Vec::new();
            let mut pieces = by_stripe.drain(..).peekable();
            while pieces.peek().is_some() {
                let round = slots.len();
                let mut slot = RoundSlot { round, stripes: Vec::new(), extents: Vec::new() };
                while let Some((stripe, _)) = pieces.peek() {
                    let stripe = *stripe;
                    if slot.stripes.last() != Some(&stripe) {
                        if slot.stripes.len() == stripes_per_round {
                            break;
                        }
                        slot.stripes.push(stripe);
                    }
                    let (_, piece) = pieces.next().expect("peeked");
                    slot.extents.push(piece);
                }
                slots.push(slot);
            }
            slots
        })
        .collect();
    Ok(RoundPlan { stripe_size: size, stripes_per_round, per_aggregator })
}

/// One copy from a sender's round message into the aggregator's write
/// buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PlacementEntry {
    pub source: Rank,
    pub src_offset: u64,
    pub length: u64,
    pub dest_offset: u64,
}

/// Receive layout for one aggregator and one round: where each incoming
/// byte lands in the contiguous write buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlacementMap {
    pub aggregator: usize,
    pub round: usize,
    pub buffer_len: u64,
    pub entries: Vec<PlacementEntry>,
}

/// A fragment sent in a round message: `(stream_pos, length, msg_offset)`
/// where `stream_pos` is in the sender's aggregated buffer.
pub type FragmentRef = (u64, u64, u64);

/// Locates sender buffer positions inside the round messages of one
/// (aggregator, round) pair. Keyed by sender rank; fragments sorted by
/// stream position.
pub type MessageIndex = BTreeMap<Rank, Vec<FragmentRef>>;

/// Builds the receive layout for one round slot. Consecutive pieces from
/// the same sender that are contiguous in both the message and the buffer
/// share one entry.
pub fn build_placement_map(aggregator: usize, slot: &RoundSlot, index: &MessageIndex) -> PlacementMap {
    let mut entries: Vec<PlacementEntry> = Vec::new();
    let mut dest = 0u64;
    for seg in slot.extents.iter().flat_map(|e| e.segments.iter()) {
        let sender = seg.source.rank;
        let frags = &index[&sender];
        let i = frags.partition_point(|f| f.0 <= seg.stream_pos) - 1;
        let (pos, len, msg_off) = frags[i];
        debug_assert!(seg.stream_pos + seg.length <= pos + len);
        let src_offset = msg_off + (seg.stream_pos - pos);
        match entries.last_mut() {
            Some(e)
                if e.source == sender && e.src_offset + e.length == src_offset && e.dest_offset + e.length == dest =>
            {
                e.length += seg.length;
            }
            _ => entries.push(PlacementEntry { source: sender, src_offset, length: seg.length, dest_offset: dest }),
        }
        dest += seg.length;
    }
    PlacementMap { aggregator, round: slot.round, buffer_len: dest, entries }
}

/// Round message payloads keyed by `(round, sender rank, aggregator index)`.
pub type DataMessages = BTreeMap<(usize, Rank, usize), Vec<u8>>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WriteStats {
    pub rounds: usize,
    pub bytes_written: u64,
    /// Bytes written per round, summed over aggregators.
    pub round_bytes: Vec<u64>,
    /// Largest single aggregator-round write.
    pub max_aggregator_round_bytes: u64,
}

/// Assembles one aggregator-round buffer through its placement map and
/// writes it. Checks the stripe discipline before touching the file.
#[allow(clippy::too_many_arguments)]
pub fn execute_round(
    plan: &RoundPlan,
    domains: &FileDomainMap,
    aggregator: usize,
    round: usize,
    map: &PlacementMap,
    messages: &DataMessages,
    file: &mut SimFile,
    policy: OverlapPolicy,
) -> Result<u64, PipelineError> {
    let slot = plan
        .slot(aggregator, round)
        .ok_or_else(|| PipelineError::RoundDiscipline(format!("aggregator {aggregator} has no round {round}")))?;
    let cap = plan.stripe_size * plan.stripes_per_round as u64;
    let bytes = slot.bytes();
    if bytes > cap {
        return Err(PipelineError::RoundDiscipline(format!(
            "aggregator {aggregator} round {round} writes {bytes} bytes, limit {cap}"
        )));
    }
    for e in &slot.extents {
        let first = e.extent.offset / plan.stripe_size;
        let last = (e.extent.end() - 1) / plan.stripe_size;
        if first != last || slot.stripes.binary_search(&first).is_err() {
            return Err(PipelineError::RoundDiscipline(format!(
                "extent {:?} leaves the stripes of aggregator {aggregator} round {round}",
                e.extent
            )));
        }
        if domains.owner_of_stripe(first) != aggregator {
            return Err(PipelineError::RoundDiscipline(format!(
                "aggregator {aggregator} writes stripe {first} owned by {}",
                domains.owner_of_stripe(first)
            )));
        }
    }
    if map.buffer_len != bytes {
        return Err(PipelineError::RoundDiscipline(format!(
            "placement map for aggregator {aggregator} round {round} covers {} of {bytes} bytes",
            map.buffer_len
        )));
    }

    let mut buffer = vec![0u8; bytes as usize];
    for entry in &map.entries {
        let payload = &messages[&(round, entry.source, aggregator)];
        let src = entry.src_offset as usize..(entry.src_offset + entry.length) as usize;
        let dst = entry.dest_offset as usize..(entry.dest_offset + entry.length) as usize;
        buffer[dst].copy_from_slice(&payload[src]);
    }
    let mut at = 0usize;
    for e in &slot.extents {
        let chunk = &buffer[at..at + e.extent.length as usize];
        match policy {
            OverlapPolicy::Strict => file
                .write_new(e.extent.offset, chunk)
                .map_err(|offset| PipelineError::WriteOverlap { offset, aggregator, round })?,
            OverlapPolicy::LastWriter => file.write(e.extent.offset, chunk),
        }
        at += chunk.len();
    }
    Ok(bytes)
}

/// Runs every round in order, aggregators in index order within a round.
pub fn execute_write(
    plan: &RoundPlan,
    domains: &FileDomainMap,
    maps: &[Vec<PlacementMap>],
    messages: &DataMessages,
    file: &mut SimFile,
    policy: OverlapPolicy,
) -> Result<WriteStats, PipelineError> {
    let rounds = plan.num_rounds();
    let mut stats = WriteStats { rounds, ..Default::default() };
    let mut round_bytes = vec![0; rounds];
    for (round, total) in round_bytes.iter_mut().enumerate() {
        for (g, slots) in plan.per_aggregator.iter().enumerate() {
            if round >= slots.len() {
                continue;
            }
            let n = execute_round(plan, domains, g, round, &maps[g][round], messages, file, policy)?;
            *total += n;
            stats.bytes_written += n;
            stats.max_aggregator_round_bytes = stats.max_aggregator_round_bytes.max(n);
        }
    }
    stats.round_bytes = round_bytes;
    Ok(stats)
}
