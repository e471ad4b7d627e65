//! Data-path kernels over offset-length lists: validation, k-way merge,
//! adjacency coalescing, overlap resolution and file-domain splitting.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::AlgebraError;
use crate::model::{FileDomainMap, OffsetLength, Rank, Violation};

/// Where an extent came from: the sending rank and its index in that
/// rank's list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Source {
    pub rank: Rank,
    pub seq: usize,
}

/// An extent plus its origin and the position of its first byte in the
/// origin's data stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggedExtent {
    pub extent: OffsetLength,
    pub source: Source,
    pub stream_pos: u64,
}

impl TaggedExtent {
    #[inline]
    pub fn offset(&self) -> u64 {
        self.extent.offset
    }

    #[inline]
    pub fn end(&self) -> u64 {
        self.extent.end()
    }

    /// The sub-extent covering file bytes `[from, to)`.
    fn slice(&self, from: u64, to: u64) -> TaggedExtent {
        debug_assert!(self.offset() <= from && from < to && to <= self.end());
        TaggedExtent {
            extent: OffsetLength { offset: from, length: to - from },
            source: self.source,
            stream_pos: self.stream_pos + (from - self.offset()),
        }
    }
}

impl Ord for TaggedExtent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.extent.offset, self.source, self.extent.length, self.stream_pos).cmp(&(
            other.extent.offset,
            other.source,
            other.extent.length,
            other.stream_pos,
        ))
    }
}

impl PartialOrd for TaggedExtent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Tags `extents` as coming from `rank`, with stream positions laid out
/// back to back in list order.
pub fn tag_list(rank: Rank, extents: &[OffsetLength]) -> Vec<TaggedExtent> {
    let mut pos = 0;
    extents
        .iter()
        .enumerate()
        .map(|(seq, &extent)| {
            let t = TaggedExtent { extent, source: Source { rank, seq }, stream_pos: pos };
            pos += extent.length;
            t
        })
        .collect()
}

/// Checks for positive lengths, representable ends and nondecreasing
/// offsets. Reports the first offending index.
pub fn validate(extents: &[OffsetLength]) -> Result<(), Violation> {
    let mut prev: Option<u64> = None;
    for (index, e) in extents.iter().enumerate() {
        if e.length == 0 {
            return Err(Violation::ZeroLength { index });
        }
        if e.offset.checked_add(e.length).is_none() {
            return Err(Violation::Overflow { index });
        }
        if let Some(p) = prev {
            if e.offset < p {
                return Err(Violation::Decreasing { index, prev: p, offset: e.offset });
            }
        }
        prev = Some(e.offset);
    }
    Ok(())
}

/// Output of a k-way merge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Merged<T> {
    pub items: Vec<T>,
    pub comparisons: u64,
}

/// Merges individually sorted lists with a tournament (winner) tree.
///
/// Each output element costs at most `ceil(log2 m)` key comparisons and
/// building the tree at most `m - 1`, so the total is bounded by
/// `n * ceil(log2 m) + m`. Ties go to the lower list index. Returns the
/// index of the first unsorted list on bad input.
pub fn kway_merge<T: Ord>(lists: Vec<Vec<T>>) -> Result<Merged<T>, AlgebraError> {
    for (list, items) in lists.iter().enumerate() {
        if let Some(i) = items.windows(2).position(|w| w[0] > w[1]) {
            return Err(AlgebraError::Unsorted { list, index: i + 1 });
        }
    }
    let total: usize = lists.iter().map(Vec::len).sum();
    let m = lists.len();
    if m <= 1 {
        return Ok(Merged { items: lists.into_iter().flatten().collect(), comparisons: 0 });
    }

    let mut iters: Vec<std::vec::IntoIter<T>> = lists.into_iter().map(Vec::into_iter).collect();
    let mut heads: Vec<Option<T>> = iters.iter_mut().map(Iterator::next).collect();
    let leaves = m.next_power_of_two();
    // tree[1] is the root; tree[leaves + i] is list i.
    let mut tree: Vec<Option<usize>> = vec![None; 2 * leaves];
    for (i, h) in heads.iter().enumerate() {
        if h.is_some() {
            tree[leaves + i] = Some(i);
        }
    }
    let mut comparisons = 0u64;
    let play = |a: Option<usize>, b: Option<usize>, heads: &[Option<T>], comparisons: &mut u64| match (a, b) {
        (Some(x), Some(y)) => {
            *comparisons += 1;
            // both leaves are live, so both heads are present
            if heads[y].as_ref() < heads[x].as_ref() {
                Some(y)
            } else {
                Some(x)
            }
        }
        (x, None) => x,
        (None, y) => y,
    };
    for node in (1..leaves).rev() {
        tree[node] = play(tree[2 * node], tree[2 * node + 1], &heads, &mut comparisons);
    }

    let mut items = Vec::with_capacity(total);
    while let Some(w) = tree[1] {
        let next = iters[w].next();
        let done = next.is_none();
        let out = std::mem::replace(&mut heads[w], next).expect("winner has a head");
        items.push(out);
        let mut node = leaves + w;
        if done {
            tree[node] = None;
        }
        while node > 1 {
            node /= 2;
            tree[node] = play(tree[2 * node], tree[2 * node + 1], &heads, &mut comparisons);
        }
    }
    Ok(Merged { items, comparisons })
}

/// Heap-merges tagged lists by (offset, origin rank, sequence index).
pub fn heap_merge(lists: Vec<Vec<TaggedExtent>>) -> Result<Merged<TaggedExtent>, AlgebraError> {
    kway_merge(lists)
}

/// A contiguous piece of a coalesced extent, taken from one source stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub source: Source,
    pub stream_pos: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoalescedExtent {
    pub extent: OffsetLength,
    pub segments: Vec<Segment>,
}

/// Sorted, non-overlapping, non-adjacent extents with their source
/// segments in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoalescedList {
    pub extents: Vec<CoalescedExtent>,
}

impl CoalescedList {
    pub fn len(&self) -> usize {
        self.extents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extents.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.extents.iter().map(|c| c.extent.length).sum()
    }

    pub fn plain(&self) -> Vec<OffsetLength> {
        self.extents.iter().map(|c| c.extent).collect()
    }

    /// Re-tags the coalesced extents as a fresh list from `sender`, whose
    /// stream is the concatenation of the extents in order.
    pub fn tagged(&self, sender: Rank) -> Vec<TaggedExtent> {
        tag_list(sender, &self.plain())
    }

    /// Segment list flattened in file order.
    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.extents.iter().flat_map(|c| c.segments.iter())
    }
}

/// Merges exactly adjacent extents. Gaps are never bridged; any overlap is
/// an error naming both sources.
pub fn coalesce(sorted: &[TaggedExtent]) -> Result<CoalescedList, AlgebraError> {
    let mut out: Vec<CoalescedExtent> = Vec::new();
    let mut last_source: Option<Source> = None;
    for t in sorted {
        let seg = Segment { source: t.source, stream_pos: t.stream_pos, length: t.extent.length };
        match out.last_mut() {
            Some(cur) if cur.extent.end() > t.offset() => {
                return Err(AlgebraError::Overlap {
                    offset: t.offset(),
                    first: last_source.expect("set with the first extent"),
                    second: t.source,
                });
            }
            Some(cur) if cur.extent.end() == t.offset() => {
                cur.extent.length += t.extent.length;
                let prev = cur.segments.last_mut().expect("extents carry segments");
                if prev.source.rank == seg.source.rank && prev.stream_pos + prev.length == seg.stream_pos {
                    prev.length += seg.length;
                } else {
                    cur.segments.push(seg);
                }
            }
            _ => out.push(CoalescedExtent { extent: t.extent, segments: vec![seg] }),
        }
        last_source = Some(t.source);
    }
    Ok(CoalescedList { extents: out })
}

/// Resolves overlaps so that each byte keeps only the copy from the
/// greatest source (origin rank, then sequence index). Output is sorted
/// and non-overlapping.
pub fn resolve_overlaps(sorted: &[TaggedExtent]) -> Vec<TaggedExtent> {
    let overlapping = sorted.windows(2).any(|w| w[0].end() > w[1].offset());
    if !overlapping {
        return sorted.to_vec();
    }
    let mut by_priority: Vec<&TaggedExtent> = sorted.iter().collect();
    by_priority.sort_by_key(|t| (t.source, t.offset()));
    let mut painted: BTreeMap<u64, TaggedExtent> = BTreeMap::new();
    for t in by_priority {
        let (start, end) = (t.offset(), t.end());
        let mut hit: Vec<u64> = Vec::new();
        if let Some((&k, p)) = painted.range(..start).next_back() {
            if p.end() > start {
                hit.push(k);
            }
        }
        hit.extend(painted.range(start..end).map(|(&k, _)| k));
        for k in hit {
            let p = painted.remove(&k).expect("key collected above");
            if p.offset() < start {
                painted.insert(p.offset(), p.slice(p.offset(), start));
            }
            if p.end() > end {
                painted.insert(end, p.slice(end, p.end()));
            }
        }
        painted.insert(start, *t);
    }
    painted.into_values().collect()
}

/// Cuts every extent at stripe boundaries and routes each piece to the
/// global aggregator index owning its stripe. Per-aggregator output stays
/// sorted.
pub fn split_tagged(list: &[TaggedExtent], domains: &FileDomainMap) -> Vec<Vec<TaggedExtent>> {
    let mut out = vec![Vec::new(); domains.num_global];
    let size = domains.stripe.stripe_size;
    for t in list {
        let mut at = t.offset();
        while at < t.end() {
            let stripe = at / size;
            let cut = ((stripe + 1) * size).min(t.end());
            out[domains.owner_of_stripe(stripe)].push(t.slice(at, cut));
            at = cut;
        }
    }
    out
}

/// Splits a sender's coalesced list into per-global-aggregator sublists.
/// Stream positions refer to the sender's buffer, which holds the
/// coalesced extents back to back.
pub fn split_by_domain(list: &CoalescedList, sender: Rank, domains: &FileDomainMap) -> Vec<Vec<TaggedExtent>> {
    split_tagged(&list.tagged(sender), domains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StripeConfig;
    use proptest::prelude::*;

    fn ol(offset: u64, length: u64) -> OffsetLength {
        OffsetLength { offset, length }
    }

    fn lengths(lists: &[Vec<TaggedExtent>]) -> u64 {
        lists.iter().flatten().map(|t| t.extent.length).sum()
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate(&[ol(0, 4), ol(4, 4)]), Ok(()));
        assert_eq!(validate(&[ol(8, 4), ol(0, 4)]), Err(Violation::Decreasing { index: 1, prev: 8, offset: 0 }));
        assert_eq!(validate(&[ol(0, 0)]), Err(Violation::ZeroLength { index: 0 }));
    }

    #[test]
    fn merge_examples() {
        let m = heap_merge(vec![tag_list(0, &[ol(0, 4)]), tag_list(1, &[ol(4, 4)])]).unwrap();
        let plain: Vec<_> = m.items.iter().map(|t| t.extent).collect();
        assert_eq!(plain, vec![ol(0, 4), ol(4, 4)]);

        // equal offsets: lower origin rank first, regardless of list order
        let m = heap_merge(vec![tag_list(1, &[ol(0, 4)]), tag_list(0, &[ol(0, 4)])]).unwrap();
        assert_eq!(m.items[0].source.rank, 0);
    }

    #[test]
    fn merge_rejects_unsorted_input() {
        let bad = vec![tag_list(0, &[ol(0, 4)]), tag_list(1, &[ol(8, 4), ol(0, 4)])];
        assert_eq!(heap_merge(bad), Err(AlgebraError::Unsorted { list: 1, index: 1 }));
    }

    #[test]
    fn merge_four_lists_of_thousand() {
        // 4 interleaved lists, 250 extents each: bound is 1000 * 2 = 2000
        let lists: Vec<Vec<TaggedExtent>> = (0..4)
            .map(|r| {
                let ext: Vec<_> = (0..250).map(|i| ol((i * 4 + r) as u64 * 16, 16)).collect();
                tag_list(r, &ext)
            })
            .collect();
        let m = heap_merge(lists).unwrap();
        assert_eq!(m.items.len(), 1000);
        assert!(m.comparisons <= 2000, "comparisons = {}", m.comparisons);
        assert!(m.items.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coalesce_examples() {
        let c = coalesce(&tag_list(0, &[ol(0, 4), ol(4, 4)])).unwrap();
        assert_eq!(c.plain(), vec![ol(0, 8)]);
        assert_eq!(c.extents[0].segments.len(), 1, "same source, contiguous stream");

        let c = coalesce(&tag_list(0, &[ol(0, 4), ol(8, 4)])).unwrap();
        assert_eq!(c.plain(), vec![ol(0, 4), ol(8, 4)]);
    }

    #[test]
    fn coalesce_partition_chain() {
        // P adjacent per-rank blocks; brute-force concatenation is one run
        let p = 37;
        let lists: Vec<_> = (0..p).map(|r| tag_list(r, &[ol(r as u64 * 10, 10)])).collect();
        let merged = heap_merge(lists).unwrap();
        let c = coalesce(&merged.items).unwrap();
        assert_eq!(c.plain(), vec![ol(0, 10 * p as u64)]);
        let order: Vec<usize> = c.extents[0].segments.iter().map(|s| s.source.rank).collect();
        assert_eq!(order, (0..p).collect::<Vec<_>>());
    }

    #[test]
    fn coalesce_reports_overlap() {
        let lists = vec![tag_list(2, &[ol(0, 8)]), tag_list(5, &[ol(4, 8)])];
        let merged = heap_merge(lists).unwrap();
        assert_eq!(
            coalesce(&merged.items),
            Err(AlgebraError::Overlap {
                offset: 4,
                first: Source { rank: 2, seq: 0 },
                second: Source { rank: 5, seq: 0 },
            })
        );
    }

    #[test]
    fn resolve_prefers_higher_rank() {
        let lists = vec![tag_list(2, &[ol(0, 8)]), tag_list(5, &[ol(4, 2)])];
        let merged = heap_merge(lists).unwrap();
        let r = resolve_overlaps(&merged.items);
        let got: Vec<_> = r.iter().map(|t| (t.offset(), t.extent.length, t.source.rank, t.stream_pos)).collect();
        assert_eq!(got, vec![(0, 4, 2, 0), (4, 2, 5, 0), (6, 2, 2, 6)]);

        let lists = vec![tag_list(5, &[ol(0, 8)]), tag_list(2, &[ol(4, 2)])];
        let merged = heap_merge(lists).unwrap();
        let r = resolve_overlaps(&merged.items);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].source.rank, 5);
    }

    #[test]
    fn split_examples() {
        let s = 100;
        let d3 = FileDomainMap::new(StripeConfig::new(s, 3).unwrap(), 3).unwrap();
        let parts = split_tagged(&tag_list(0, &[ol(0, 3 * s)]), &d3);
        for (g, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), 1);
            assert_eq!(p[0].extent, ol(g as u64 * s, s));
            assert_eq!(p[0].stream_pos, g as u64 * s);
        }

        let d2 = FileDomainMap::new(StripeConfig::new(s, 2).unwrap(), 2).unwrap();
        let parts = split_tagged(&tag_list(0, &[ol(s / 2, s)]), &d2);
        assert_eq!(parts[0].iter().map(|t| t.extent).collect::<Vec<_>>(), vec![ol(50, 50)]);
        assert_eq!(parts[1].iter().map(|t| t.extent).collect::<Vec<_>>(), vec![ol(100, 50)]);

        let d4 = FileDomainMap::new(StripeConfig::new(s, 4).unwrap(), 4).unwrap();
        let parts = split_tagged(&tag_list(0, &[ol(5 * s + 10, 20)]), &d4);
        assert_eq!(parts[1].len(), 1);
        assert_eq!(lengths(&parts), 20);
    }

    fn sorted_disjoint_lists() -> impl Strategy<Value = Vec<Vec<OffsetLength>>> {
        // each list gets its own residue class of 64-byte slots, so lists
        // never overlap each other
        (1usize..6, prop::collection::vec((0u64..40, 1u64..=64, any::<bool>()), 0..60)).prop_map(|(m, raw)| {
            let mut lists = vec![Vec::new(); m];
            for (i, (slot, len, _)) in raw.into_iter().enumerate() {
                let l = i % m;
                lists[l].push(((slot * m as u64 + l as u64) * 64, len));
            }
            lists
                .into_iter()
                .map(|mut v| {
                    v.sort_unstable();
                    v.dedup_by_key(|x| x.0);
                    v.into_iter().map(|(o, n)| ol(o, n)).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_matches_sort_oracle(lists in sorted_disjoint_lists()) {
            let tagged: Vec<_> = lists.iter().enumerate().map(|(r, l)| tag_list(r, l)).collect();
            let mut oracle: Vec<TaggedExtent> = tagged.iter().flatten().copied().collect();
            oracle.sort();
            let n = oracle.len() as u64;
            let m = tagged.len() as u64;
            let merged = heap_merge(tagged).unwrap();
            prop_assert_eq!(&merged.items, &oracle);
            let depth = 64 - (m.max(1) - 1).leading_zeros() as u64;
            prop_assert!(merged.comparisons <= n * depth + m);
        }

        #[test]
        fn coalesce_is_idempotent_and_conserving(lists in sorted_disjoint_lists()) {
            let tagged: Vec<_> = lists.iter().enumerate().map(|(r, l)| tag_list(r, l)).collect();
            let total = lengths(&tagged);
            let merged = heap_merge(tagged).unwrap();
            let once = coalesce(&merged.items).unwrap();
            prop_assert_eq!(once.total_bytes(), total);
            let seg_total: u64 = once.segments().map(|s| s.length).sum();
            prop_assert_eq!(seg_total, total);
            let twice = coalesce(&once.tagged(0)).unwrap();
            prop_assert_eq!(twice.plain(), once.plain());
            prop_assert!(once.plain().windows(2).all(|w| w[0].end() < w[1].offset));
        }

        #[test]
        fn split_then_merge_restores(lists in sorted_disjoint_lists(), size in 1u64..300, g in 1usize..6) {
            let tagged: Vec<_> = lists.iter().enumerate().map(|(r, l)| tag_list(r, l)).collect();
            let merged = heap_merge(tagged).unwrap();
            let once = coalesce(&merged.items).unwrap();
            let domains = FileDomainMap::new(StripeConfig::new(size, g).unwrap(), g).unwrap();
            let parts = split_by_domain(&once, 7, &domains);
            prop_assert_eq!(lengths(&parts), once.total_bytes());
            for (idx, p) in parts.iter().enumerate() {
                for t in p {
                    prop_assert_eq!(domains.owner(t.offset()), idx);
                    prop_assert_eq!(t.offset() / size, (t.end() - 1) / size);
                }
            }
            let back = coalesce(&heap_merge(parts).unwrap().items).unwrap();
            prop_assert_eq!(back.plain(), once.plain());
        }

        #[test]
        fn resolve_covers_union(raw in prop::collection::vec((0u64..200, 1u64..40, 0usize..4), 1..30)) {
            let mut lists = vec![Vec::new(); 4];
            for (o, n, r) in raw {
                lists[r].push(ol(o, n));
            }
            // keep each origin self-disjoint
            let lists: Vec<Vec<OffsetLength>> = lists.into_iter().map(|mut v| {
                v.sort();
                let mut keep: Vec<OffsetLength> = Vec::new();
                for e in v {
                    if keep.last().is_none_or(|p| p.end() <= e.offset) {
                        keep.push(e);
                    }
                }
                keep
            }).collect();
            let mut owner = [None::<usize>; 240];
            for (r, l) in lists.iter().enumerate() {
                for e in l {
                    for b in e.offset..e.end() {
                        owner[b as usize] = Some(r);
                    }
                }
            }
            let tagged: Vec<_> = lists.iter().enumerate().map(|(r, l)| tag_list(r, l)).collect();
            let merged = heap_merge(tagged).unwrap();
            let resolved = resolve_overlaps(&merged.items);
            prop_assert!(resolved.windows(2).all(|w| w[0].end() <= w[1].offset()));
            let mut got = [None::<usize>; 240];
            for t in &resolved {
                for b in t.offset()..t.end() {
                    got[b as usize] = Some(t.source.rank);
                }
            }
            prop_assert_eq!(got.to_vec(), owner.to_vec());
        }
    }
}
