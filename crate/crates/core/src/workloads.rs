//! Request generators for the bundled I/O patterns and the decomposition
//! file loader.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::model::{OffsetLength, ProcRequest, RequestList};

/// Bytes per array element (double precision).
pub const ELEMENT_BYTES: u64 = 8;
/// Values per BTIO grid cell (the unpartitioned fifth dimension).
pub const BTIO_CELL_VALUES: u64 = 5;
/// S3D variables in file order: mass, velocity, pressure, temperature,
/// with their fourth-dimension lengths.
pub const S3D_VARIABLES: [(&str, u64); 4] = [("mass", 11), ("velocity", 3), ("pressure", 1), ("temperature", 1)];

/// Miniature synthetic decomposition in the style of an unstructured ocean
/// mesh: 16 recorded processes, three variables, scattered cell runs.
pub const BUNDLED_DECOMP: &str = include_str!("../fixtures/e3sm_like_decomp.json");

fn build(rank: usize, extents: Vec<OffsetLength>, seed: u64) -> Result<ProcRequest, WorkloadError> {
    let list = RequestList::new(extents)?;
    Ok(ProcRequest::with_seed(rank, list, seed.wrapping_add(rank as u64))?)
}

/// Rank `p` writes `[p * block, (p + 1) * block)`.
pub fn gen_contiguous1d(procs: usize, block_bytes: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
    gen_contiguous1d_seeded(procs, block_bytes, 0)
}

pub fn gen_contiguous1d_seeded(procs: usize, block_bytes: u64, seed: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
    if block_bytes == 0 {
        return Err(WorkloadError::NonPositive("block_bytes"));
    }
    if procs == 0 {
        return Err(WorkloadError::NonPositive("procs"));
    }
    (0..procs).map(|p| build(p, vec![OffsetLength::new(p as u64 * block_bytes, block_bytes)?], seed)).collect()
}

fn exact_sqrt(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

/// BTIO-like block-tridiagonal pattern.
///
/// `vars` arrays of `n^3` cells with five doubles per cell are stored one
/// after another, x fastest. With `P = s^2`, process `p` has grid
/// coordinates `(r, c) = (p mod s, p / s)` and owns, in every z-slab `t`,
/// the cell block `(x = (r + t) mod s, y = c, z = t)`. Adjacent ranks thus
/// own x-neighbouring blocks, whose rows coalesce.
pub fn gen_btio(n: usize, procs: usize, vars: usize) -> Result<Vec<ProcRequest>, WorkloadError> {
    gen_btio_seeded(n, procs, vars, 0)
}

pub fn gen_btio_seeded(n: usize, procs: usize, vars: usize, seed: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::NonPositive("n"));
    }
    if vars == 0 {
        return Err(WorkloadError::NonPositive("vars"));
    }
    let s = exact_sqrt(procs).ok_or(WorkloadError::NotSquare(procs))?;
    if s == 0 || !n.is_multiple_of(s) {
        return Err(WorkloadError::NotDivisible { what: "BTIO grid edge", n, divisor: s });
    }
    let b = (n / s) as u64;
    let n = n as u64;
    let row_bytes = b * BTIO_CELL_VALUES * ELEMENT_BYTES;
    (0..procs)
        .map(|p| {
            let (r, c) = ((p % s) as u64, (p / s) as u64);
            let mut extents = Vec::with_capacity(vars * s * (b * b) as usize);
            for v in 0..vars as u64 {
                for t in 0..s as u64 {
                    let i = (r + t) % s as u64;
                    for z in t * b..(t + 1) * b {
                        for y in c * b..(c + 1) * b {
                            let cell = v * n * n * n + z * n * n + y * n + i * b;
                            extents.push(OffsetLength::new(cell * BTIO_CELL_VALUES * ELEMENT_BYTES, row_bytes)?);
                        }
                    }
                }
            }
            build(p, extents, seed)
        })
        .collect()
}

/// S3D-like block-block-block pattern on an `n^3` grid with a
/// `px * py * pz` process grid, x-rank fastest.
///
/// Each variable is stored fourth dimension slowest and x fastest, so every
/// process writes `dim4 * (n/py) * (n/pz)` runs of `(n/px) * 8` bytes per
/// variable.
pub fn gen_s3d(n: usize, px: usize, py: usize, pz: usize) -> Result<Vec<ProcRequest>, WorkloadError> {
    gen_s3d_seeded(n, px, py, pz, 0)
}

pub fn gen_s3d_seeded(n: usize, px: usize, py: usize, pz: usize, seed: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::NonPositive("n"));
    }
    for (what, d) in [("S3D x partition", px), ("S3D y partition", py), ("S3D z partition", pz)] {
        if d == 0 || !n.is_multiple_of(d) {
            return Err(WorkloadError::NotDivisible { what, n, divisor: d });
        }
    }
    let (bx, by, bz) = ((n / px) as u64, (n / py) as u64, (n / pz) as u64);
    let n = n as u64;
    let cube = n * n * n;
    (0..px * py * pz)
        .map(|p| {
            let ix = (p % px) as u64;
            let iy = ((p / px) % py) as u64;
            let iz = (p / (px * py)) as u64;
            let mut extents = Vec::new();
            let mut base = 0u64;
            for &(_, dim4) in &S3D_VARIABLES {
                for d in 0..dim4 {
                    for z in iz * bz..(iz + 1) * bz {
                        for y in iy * by..(iy + 1) * by {
                            let elem = base + ((d * n + z) * n + y) * n + ix * bx;
                            extents.push(OffsetLength::new(elem * ELEMENT_BYTES, bx * ELEMENT_BYTES)?);
                        }
                    }
                }
                base += dim4 * cube;
            }
            build(p, extents, seed)
        })
        .collect()
}

/// Total BTIO write size in bytes.
pub fn btio_total_bytes(n: u64, vars: u64) -> u64 {
    ELEMENT_BYTES * vars * n * n * n * BTIO_CELL_VALUES
}

/// Total BTIO request count over all processes: `vars * n^2 * sqrt(P)`.
pub fn btio_total_extents(n: u64, procs: u64, vars: u64) -> Option<u64> {
    let s = exact_sqrt(procs as usize)? as u64;
    Some(vars * n * n * s)
}

/// Total S3D write size in bytes.
pub fn s3d_total_bytes(n: u64) -> u64 {
    let values: u64 = S3D_VARIABLES.iter().map(|&(_, d)| d).sum();
    ELEMENT_BYTES * values * n * n * n
}

/// Total S3D request count over all processes under the x-fastest layout:
/// `16 * n^2 * px`.
pub fn s3d_total_extents(n: u64, px: u64) -> u64 {
    let values: u64 = S3D_VARIABLES.iter().map(|&(_, d)| d).sum();
    values * n * n * px
}

/// Picks a `(px, py, pz)` factorisation of `procs` with every factor
/// dividing `n`, as close to cubic as possible.
pub fn s3d_grid(n: usize, procs: usize) -> Result<(usize, usize, usize), WorkloadError> {
    let mut best: Option<(usize, (usize, usize, usize))> = None;
    for px in (1..=procs).filter(|d| procs.is_multiple_of(*d) && n.is_multiple_of(*d)) {
        let rest = procs / px;
        for py in (1..=rest).filter(|d| rest.is_multiple_of(*d) && n.is_multiple_of(*d)) {
            let pz = rest / py;
            if !n.is_multiple_of(pz) {
                continue;
            }
            let spread = px.max(py).max(pz) - px.min(py).min(pz);
            if best.is_none_or(|(s, _)| spread < s) {
                best = Some((spread, (px, py, pz)));
            }
        }
    }
    best.map(|(_, g)| g).ok_or(WorkloadError::BadFactorization { px: 0, py: 0, pz: 0, procs })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompHeader {
    pub element_size: u64,
    pub total_elements: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompProcess {
    pub rank: usize,
    pub offsets: Vec<u64>,
    pub lengths: Vec<u64>,
}

/// Recorded per-process decomposition, offsets and lengths in elements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub header: DecompHeader,
    pub processes: Vec<DecompProcess>,
}

impl Decomposition {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let d: Decomposition = serde_json::from_str(text)?;
        d.check()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), WorkloadError> {
        if self.header.element_size == 0 {
            return Err(WorkloadError::Malformed("element_size must be positive".into()));
        }
        let mut seen = vec![false; self.processes.len()];
        for p in &self.processes {
            if p.rank >= seen.len() || std::mem::replace(&mut seen[p.rank], true) {
                return Err(WorkloadError::Malformed(format!(
                    "ranks must be 0..{} without repeats, found {}",
                    seen.len(),
                    p.rank
                )));
            }
            if p.offsets.len() != p.lengths.len() {
                return Err(WorkloadError::Malformed(format!(
                    "rank {}: {} offsets but {} lengths",
                    p.rank,
                    p.offsets.len(),
                    p.lengths.len()
                )));
            }
            for (&o, &l) in p.offsets.iter().zip(&p.lengths) {
                if l == 0 || o.checked_add(l).is_none_or(|e| e > self.header.total_elements) {
                    return Err(WorkloadError::Malformed(format!(
                        "rank {}: extent ({o}, {l}) outside {} elements",
                        p.rank, self.header.total_elements
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn recorded_procs(&self) -> usize {
        self.processes.len()
    }

    pub fn total_extents(&self) -> usize {
        self.processes.iter().map(|p| p.offsets.len()).sum()
    }

    /// Spreads recorded processes round-robin onto `target` ranks: recorded
    /// process `i` goes to rank `i mod target`. Offsets are scaled to bytes.
    pub fn assign(&self, target: usize, seed: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
        if target == 0 {
            return Err(WorkloadError::NonPositive("procs"));
        }
        if target > self.recorded_procs() {
            return Err(WorkloadError::TooFewRecorded { recorded: self.recorded_procs(), target });
        }
        let es = self.header.element_size;
        let mut per_rank: Vec<Vec<(u64, u64)>> = vec![Vec::new(); target];
        let mut by_rank: Vec<&DecompProcess> = self.processes.iter().collect();
        by_rank.sort_by_key(|p| p.rank);
        for p in by_rank {
            per_rank[p.rank % target].extend(p.offsets.iter().zip(&p.lengths).map(|(&o, &l)| (o * es, l * es)));
        }
        per_rank
            .into_iter()
            .enumerate()
            .map(|(rank, mut ext)| {
                ext.sort_unstable();
                if let Some(w) = ext.windows(2).find(|w| w[0].0 + w[0].1 > w[1].0) {
                    return Err(WorkloadError::Malformed(format!(
                        "rank {rank}: recorded extents at bytes {} and {} overlap",
                        w[0].0, w[1].0
                    )));
                }
                let extents = ext.into_iter().map(|(o, l)| OffsetLength::new(o, l)).collect::<Result<Vec<_>, _>>()?;
                build(rank, extents, seed)
            })
            .collect()
    }
}

/// Loads a decomposition file and spreads it onto `target` ranks.
pub fn load_decomp(path: &Path, target: usize) -> Result<Vec<ProcRequest>, WorkloadError> {
    Decomposition::load(path)?.assign(target, 0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    #[default]
    Contiguous1d,
    Btio,
    S3d,
    DecompFile,
}

impl WorkloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::Contiguous1d => "contiguous1d",
            WorkloadKind::Btio => "btio",
            WorkloadKind::S3d => "s3d",
            WorkloadKind::DecompFile => "decomp_file",
        }
    }
}

/// Workload description shared by config files and the CLI.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Grid edge for `btio` and `s3d`.
    pub n: usize,
    /// Bytes per process for `contiguous1d`.
    pub block_bytes: u64,
    /// Variable count for `btio`.
    pub vars: usize,
    /// Explicit S3D process grid; chosen automatically when absent.
    pub grid: Option<(usize, usize, usize)>,
    /// Decomposition file; the bundled fixture when absent.
    pub decomp: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { kind: WorkloadKind::Contiguous1d, n: 16, block_bytes: 4096, vars: 40, grid: None, decomp: None }
    }
}

impl WorkloadSpec {
    pub fn generate(&self, procs: usize, seed: u64) -> Result<Vec<ProcRequest>, WorkloadError> {
        match self.kind {
            WorkloadKind::Contiguous1d => gen_contiguous1d_seeded(procs, self.block_bytes, seed),
            WorkloadKind::Btio => gen_btio_seeded(self.n, procs, self.vars, seed),
            WorkloadKind::S3d => {
                let (px, py, pz) = match self.grid {
                    Some(g) => g,
                    None => s3d_grid(self.n, procs)?,
                };
                if px * py * pz != procs {
                    return Err(WorkloadError::BadFactorization { px, py, pz, procs });
                }
                gen_s3d_seeded(self.n, px, py, pz, seed)
            }
            WorkloadKind::DecompFile => {
                let d = match &self.decomp {
                    Some(path) => Decomposition::load(path)?,
                    None => Decomposition::parse(BUNDLED_DECOMP)?,
                };
                d.assign(procs, seed)
            }
        }
    }
}
