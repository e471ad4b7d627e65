//! Shared data model: requests, topology, aggregator layout and striping.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Global MPI-style process rank.
pub type Rank = usize;

/// One contiguous file extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OffsetLength {
    pub offset: u64,
    pub length: u64,
}

impl OffsetLength {
    /// Checked constructor: rejects zero lengths and extents whose end
    /// does not fit in a `u64` file offset.
    pub fn new(offset: u64, length: u64) -> Result<Self, ModelError> {
        if length == 0 {
            return Err(ModelError::ZeroLength { offset });
        }
        if offset.checked_add(length).is_none() {
            return Err(ModelError::OffsetOverflow { offset, length });
        }
        Ok(Self { offset, length })
    }

    /// One past the last byte.
    #[inline]
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// The first problem found in an extent list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    ZeroLength { index: usize },
    Overflow { index: usize },
    Decreasing { index: usize, prev: u64, offset: u64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ZeroLength { index } => write!(f, "extent {index} has zero length"),
            Violation::Overflow { index } => write!(f, "extent {index} overflows the file offset range"),
            Violation::Decreasing { index, prev, offset } => {
                write!(f, "extent {index} offset {offset} is below previous offset {prev}")
            }
        }
    }
}

/// Offset-sorted extents with their byte total.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RequestList {
    extents: Vec<OffsetLength>,
    total_bytes: u64,
}

impl RequestList {
    pub fn new(extents: Vec<OffsetLength>) -> Result<Self, ModelError> {
        if let Err(violation) = crate::algebra::validate(&extents) {
            return Err(ModelError::InvalidList(violation));
        }
        let total_bytes = extents.iter().map(|e| e.length).sum();
        Ok(Self { extents, total_bytes })
    }

    pub fn extents(&self) -> &[OffsetLength] {
        &self.extents
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn len(&self) -> usize {
        self.extents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extents.is_empty()
    }
}

/// Byte `index` of the data stream generated from `seed`.
///
/// The position is taken within the stream, not the file, so a byte
/// landing at the wrong file offset is detectable.
#[inline]
pub fn fill_byte(seed: u64, index: u64) -> u8 {
    (seed.wrapping_mul(167).wrapping_add(index.wrapping_mul(13)).wrapping_add(5) % 256) as u8
}

/// One process's write request. Data bytes are generated on demand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProcRequest {
    pub rank: Rank,
    requests: RequestList,
    pub fill_seed: u64,
}

impl ProcRequest {
    /// Builds a request whose data seed equals its rank.
    pub fn new(rank: Rank, requests: RequestList) -> Result<Self, ModelError> {
        Self::with_seed(rank, requests, rank as u64)
    }

    pub fn with_seed(rank: Rank, requests: RequestList, fill_seed: u64) -> Result<Self, ModelError> {
        for (i, w) in requests.extents().windows(2).enumerate() {
            if w[0].end() > w[1].offset {
                return Err(ModelError::SelfOverlap { rank, index: i + 1 });
            }
        }
        Ok(Self { rank, requests, fill_seed })
    }

    pub fn requests(&self) -> &RequestList {
        &self.requests
    }

    pub fn extents(&self) -> &[OffsetLength] {
        self.requests.extents()
    }

    pub fn total_bytes(&self) -> u64 {
        self.requests.total_bytes()
    }

    /// Generates the full data stream in extent order.
    pub fn materialize(&self) -> Vec<u8> {
        (0..self.total_bytes()).map(|i| fill_byte(self.fill_seed, i)).collect()
    }

    /// Generates `len` stream bytes starting at stream position `start`.
    pub fn stream_bytes(&self, start: u64, len: u64) -> impl Iterator<Item = u8> + '_ {
        (start..start + len).map(move |i| fill_byte(self.fill_seed, i))
    }
}

/// Uniform node/process grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    num_nodes: usize,
    procs_per_node: usize,
}

impl Topology {
    pub fn new(num_nodes: usize, procs_per_node: usize) -> Result<Self, ModelError> {
        if num_nodes == 0 || procs_per_node == 0 {
            return Err(ModelError::EmptyTopology);
        }
        Ok(Self { num_nodes, procs_per_node })
    }

    /// Splits `procs` evenly across `num_nodes`; uneven splits are rejected.
    pub fn from_procs(procs: usize, num_nodes: usize) -> Result<Self, ModelError> {
        if num_nodes == 0 || procs == 0 {
            return Err(ModelError::EmptyTopology);
        }
        if !procs.is_multiple_of(num_nodes) {
            return Err(ModelError::NonUniform { procs, nodes: num_nodes });
        }
        Self::new(num_nodes, procs / num_nodes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn procs_per_node(&self) -> usize {
        self.procs_per_node
    }

    pub fn nprocs(&self) -> usize {
        self.num_nodes * self.procs_per_node
    }

    pub fn rank_to_node(&self, rank: Rank) -> Result<usize, ModelError> {
        if rank >= self.nprocs() {
            return Err(ModelError::RankOutOfRange { rank, nprocs: self.nprocs() });
        }
        Ok(rank / self.procs_per_node)
    }

    /// Global rank of node-local rank `local` on `node`.
    pub fn global_rank(&self, node: usize, local: usize) -> Rank {
        node * self.procs_per_node + local
    }

    pub fn node_ranks(&self, node: usize) -> std::ops::Range<Rank> {
        let first = node * self.procs_per_node;
        first..first + self.procs_per_node
    }
}

/// Local and global aggregator assignment for one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AggregatorLayout {
    topology: Topology,
    local_aggs: Vec<Rank>,
    global_aggs: Vec<Rank>,
    group_of: Vec<Rank>,
}

impl AggregatorLayout {
    /// Validates and assembles a layout. Local aggregators are sorted and
    /// deduplicated; global aggregators keep their order, which defines the
    /// stripe ownership.
    pub fn new(topology: Topology, mut local_aggs: Vec<Rank>, global_aggs: Vec<Rank>) -> Result<Self, ModelError> {
        let nprocs = topology.nprocs();
        local_aggs.sort_unstable();
        local_aggs.dedup();
        if let Some(&bad) = local_aggs.iter().chain(&global_aggs).find(|&&r| r >= nprocs) {
            return Err(ModelError::RankOutOfRange { rank: bad, nprocs });
        }
        if global_aggs.is_empty() {
            return Err(ModelError::NoGlobalAggregators);
        }
        let mut seen = vec![false; nprocs];
        for &g in &global_aggs {
            if std::mem::replace(&mut seen[g], true) {
                return Err(ModelError::DuplicateGlobalAggregator(g));
            }
            if local_aggs.binary_search(&g).is_err() {
                return Err(ModelError::GlobalNotLocal(g));
            }
        }
        let group_of = crate::select::assign_groups(&topology, &local_aggs)?;
        Ok(Self { topology, local_aggs, global_aggs, group_of })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn local_aggs(&self) -> &[Rank] {
        &self.local_aggs
    }

    pub fn global_aggs(&self) -> &[Rank] {
        &self.global_aggs
    }

    /// Local aggregator of `rank`.
    pub fn group_of(&self, rank: Rank) -> Rank {
        self.group_of[rank]
    }

    pub fn group_map(&self) -> &[Rank] {
        &self.group_of
    }

    /// Ranks gathered by local aggregator `agg`, ascending.
    pub fn members(&self, agg: Rank) -> Vec<Rank> {
        let node = agg / self.topology.procs_per_node();
        self.topology.node_ranks(node).filter(|&r| self.group_of[r] == agg).collect()
    }

    pub fn num_local(&self) -> usize {
        self.local_aggs.len()
    }

    pub fn num_global(&self) -> usize {
        self.global_aggs.len()
    }

    pub fn is_local_agg(&self, rank: Rank) -> bool {
        self.local_aggs.binary_search(&rank).is_ok()
    }

    /// True when every process is its own local aggregator.
    pub fn is_degenerate(&self) -> bool {
        self.local_aggs.len() == self.topology.nprocs()
    }
}

/// Lustre-style striping parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripeConfig {
    pub stripe_size: u64,
    pub stripe_count: usize,
}

impl StripeConfig {
    pub fn new(stripe_size: u64, stripe_count: usize) -> Result<Self, ModelError> {
        if stripe_size == 0 {
            return Err(ModelError::ZeroStripeSize);
        }
        if stripe_count == 0 {
            return Err(ModelError::ZeroStripeCount);
        }
        Ok(Self { stripe_size, stripe_count })
    }

    #[inline]
    pub fn stripe_of(&self, offset: u64) -> u64 {
        offset / self.stripe_size
    }

    #[inline]
    pub fn stripe_start(&self, stripe: u64) -> u64 {
        stripe * self.stripe_size
    }
}

/// Stripe index of `offset`.
pub fn stripe_of(offset: u64, cfg: &StripeConfig) -> u64 {
    cfg.stripe_of(offset)
}

/// Stripe to global-aggregator ownership: index `g` owns every stripe
/// congruent to `g` modulo the aggregator count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FileDomainMap {
    pub stripe: StripeConfig,
    pub num_global: usize,
}

impl FileDomainMap {
    pub fn new(stripe: StripeConfig, num_global: usize) -> Result<Self, ModelError> {
        if num_global == 0 {
            return Err(ModelError::NoGlobalAggregators);
        }
        Ok(Self { stripe, num_global })
    }

    #[inline]
    pub fn owner_of_stripe(&self, stripe: u64) -> usize {
        (stripe % self.num_global as u64) as usize
    }

    #[inline]
    pub fn owner(&self, offset: u64) -> usize {
        self.owner_of_stripe(self.stripe.stripe_of(offset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_to_node_examples() {
        let t8 = Topology::new(4, 8).unwrap();
        assert_eq!(t8.rank_to_node(0).unwrap(), 0);
        assert_eq!(t8.rank_to_node(7).unwrap(), 0);
        assert_eq!(t8.rank_to_node(8).unwrap(), 1);
        let t64 = Topology::new(2, 64).unwrap();
        assert_eq!(t64.rank_to_node(65).unwrap(), 1);
        assert!(matches!(t64.rank_to_node(128), Err(ModelError::RankOutOfRange { rank: 128, nprocs: 128 })));
    }

    #[test]
    fn stripe_of_examples() {
        let cfg = StripeConfig::new(1 << 20, 4).unwrap();
        assert_eq!(stripe_of(0, &cfg), 0);
        assert_eq!(stripe_of(1_048_576, &cfg), 1);
        // 2_500_000 / 1_048_576 = 2.38..
        assert_eq!(stripe_of(2_500_000, &cfg), 2);
    }

    #[test]
    fn offset_length_rejects_bad_extents() {
        assert!(OffsetLength::new(0, 0).is_err());
        assert!(OffsetLength::new(u64::MAX, 1).is_err());
        assert_eq!(OffsetLength::new(10, 5).unwrap().end(), 15);
    }

    #[test]
    fn topology_rejects_non_uniform() {
        assert!(Topology::from_procs(10, 3).is_err());
        assert!(Topology::new(0, 3).is_err());
        let t = Topology::from_procs(12, 3).unwrap();
        assert_eq!(t.procs_per_node(), 4);
        let total: usize = (0..t.num_nodes()).map(|n| t.node_ranks(n).len()).sum();
        assert_eq!(total, t.nprocs());
    }

    #[test]
    fn fill_byte_first_values() {
        assert_eq!(fill_byte(0, 0), 5);
        assert_eq!(fill_byte(0, 1), 18);
        assert_eq!(fill_byte(1, 0), (167 + 5) as u8);
    }

    #[test]
    fn proc_request_rejects_self_overlap() {
        let list = RequestList::new(vec![OffsetLength::new(0, 8).unwrap(), OffsetLength::new(4, 8).unwrap()]).unwrap();
        assert!(matches!(ProcRequest::new(3, list), Err(ModelError::SelfOverlap { rank: 3, index: 1 })));
    }

    #[test]
    fn layout_requires_globals_to_be_local() {
        let t = Topology::new(2, 4).unwrap();
        assert!(matches!(AggregatorLayout::new(t, vec![0, 4], vec![1]), Err(ModelError::GlobalNotLocal(1))));
        let l = AggregatorLayout::new(t, vec![4, 0, 2], vec![0, 4]).unwrap();
        assert_eq!(l.local_aggs(), &[0, 2, 4]);
        assert_eq!(l.members(0), vec![0, 1]);
        assert_eq!(l.members(4), vec![4, 5, 6, 7]);
    }

    #[test]
    fn domain_owner_wraps() {
        let d = FileDomainMap::new(StripeConfig::new(100, 4).unwrap(), 4).unwrap();
        assert_eq!(d.owner(550), 1);
        assert_eq!(d.owner(399), 3);
        assert_eq!(d.owner(400), 0);
    }
}
