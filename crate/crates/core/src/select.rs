//! Local aggregator selection, group assignment, and global aggregator
//! placement.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SelectError};
use crate::model::{AggregatorLayout, Rank, Topology};

/// How global aggregators are placed across nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPolicy {
    /// Pick nodes with the even-spread formula, then local aggregators on
    /// each picked node in spread order.
    #[default]
    SpreadEven,
    /// Rank 0 of every node, then rank 1 of every node, and so on.
    RoundRobinAcrossNodes,
}

/// Which end of a node's local aggregator list `SpreadEven` starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPick {
    #[default]
    Lowest,
    Highest,
}

/// Node-local ranks of the `c` local aggregators among `q` processes.
///
/// With `e = q mod c`, the first `e` picks are `ceil(q/c)` apart and the
/// rest `floor(q/c)` apart.
pub fn select_local_aggregators(q: usize, c: usize) -> Result<Vec<usize>, SelectError> {
    if c == 0 || c > q {
        return Err(SelectError::InvalidCount { q, c });
    }
    let e = q % c;
    let hi = q.div_ceil(c);
    let lo = q / c;
    Ok((0..c).map(|i| if i < e { hi * i } else { hi * e + lo * (i - e) }).collect())
}

/// Maps every rank to the greatest local aggregator on its node that does
/// not exceed it. `local_aggs` must be sorted.
pub fn assign_groups(topo: &Topology, local_aggs: &[Rank]) -> Result<Vec<Rank>, ModelError> {
    let mut group_of = vec![0; topo.nprocs()];
    let mut next = 0;
    for node in 0..topo.num_nodes() {
        let mut current = None;
        for rank in topo.node_ranks(node) {
            while next < local_aggs.len() && local_aggs[next] <= rank {
                current = Some(local_aggs[next]);
                next += 1;
            }
            match current {
                Some(agg) if topo.rank_to_node(agg)? == node => group_of[rank] = agg,
                _ => return Err(ModelError::UncoveredNode { node }),
            }
        }
    }
    Ok(group_of)
}

/// Local aggregators for every node, `c` per node, as global ranks.
pub fn local_aggregators_for(topo: &Topology, c: usize) -> Result<Vec<Rank>, SelectError> {
    let per_node = select_local_aggregators(topo.procs_per_node(), c)?;
    Ok((0..topo.num_nodes()).flat_map(|node| per_node.iter().map(move |&l| topo.global_rank(node, l))).collect())
}

/// Ordered global aggregators plus the (possibly enlarged) local set.
///
/// Any global aggregator the policy lands on that is not already a local
/// aggregator is added to the local set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalSelection {
    pub global_aggs: Vec<Rank>,
    pub local_aggs: Vec<Rank>,
}

pub fn select_global_aggregators(
    topo: &Topology,
    num_global: usize,
    policy: GlobalPolicy,
    local_aggs: &[Rank],
    pick: LocalPick,
) -> Result<GlobalSelection, SelectError> {
    let nprocs = topo.nprocs();
    if num_global == 0 {
        return Err(ModelError::NoGlobalAggregators.into());
    }
    if num_global > nprocs {
        return Err(SelectError::TooManyGlobal { requested: num_global, nprocs });
    }
    let q = topo.procs_per_node();
    let global_aggs = match policy {
        GlobalPolicy::RoundRobinAcrossNodes => (0..q)
            .flat_map(|local| (0..topo.num_nodes()).map(move |node| topo.global_rank(node, local)))
            .take(num_global)
            .collect(),
        GlobalPolicy::SpreadEven => {
            let nodes = select_local_aggregators(topo.num_nodes(), num_global.min(topo.num_nodes()))?;
            let per = num_global / nodes.len();
            let extra = num_global % nodes.len();
            let mut picks: Vec<Vec<Rank>> = Vec::with_capacity(nodes.len());
            for (j, &node) in nodes.iter().enumerate() {
                let want = per + usize::from(j < extra);
                let mut on_node: Vec<Rank> = local_aggs.iter().copied().filter(|&r| r / q == node).collect();
                if pick == LocalPick::Highest {
                    on_node.reverse();
                }
                let chosen = if want <= on_node.len() {
                    select_local_aggregators(on_node.len(), want)?.into_iter().map(|i| on_node[i]).collect()
                } else {
                    // Not enough local aggregators here; spread over the whole node.
                    select_local_aggregators(q, want)?.into_iter().map(|l| topo.global_rank(node, l)).collect()
                };
                picks.push(chosen);
            }
            let depth = picks.iter().map(Vec::len).max().unwrap_or(0);
            (0..depth).flat_map(|w| picks.iter().filter_map(move |p| p.get(w).copied())).collect()
        }
    };
    let mut locals = local_aggs.to_vec();
    locals.extend(&global_aggs);
    locals.sort_unstable();
    locals.dedup();
    Ok(GlobalSelection { global_aggs, local_aggs: locals })
}

/// Builds a complete layout with `c` local aggregators per node.
pub fn build_layout(
    topo: Topology,
    c: usize,
    num_global: usize,
    policy: GlobalPolicy,
    pick: LocalPick,
) -> Result<AggregatorLayout, SelectError> {
    let locals = local_aggregators_for(&topo, c)?;
    let sel = select_global_aggregators(&topo, num_global, policy, &locals, pick)?;
    Ok(AggregatorLayout::new(topo, sel.local_aggs, sel.global_aggs)?)
}

/// Layout where every process is a local aggregator, i.e. classic
/// two-phase I/O.
pub fn two_phase_layout(
    topo: Topology,
    num_global: usize,
    policy: GlobalPolicy,
    pick: LocalPick,
) -> Result<AggregatorLayout, SelectError> {
    build_layout(topo, topo.procs_per_node(), num_global, policy, pick)
}
