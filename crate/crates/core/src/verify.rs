//! Reference serial writer and file image comparison.

use crate::error::OracleError;
use crate::io_phase::OverlapPolicy;
use crate::model::{ProcRequest, Rank};
use crate::simfile::SimFile;

/// Writes every request directly in ascending rank order.
///
/// Under [`OverlapPolicy::Strict`] any byte claimed by two ranks is an
/// error; under [`OverlapPolicy::LastWriter`] the higher rank wins.
pub fn serial_oracle(procs: &[ProcRequest], policy: OverlapPolicy) -> Result<SimFile, OracleError> {
    if policy == OverlapPolicy::Strict {
        find_overlap(procs)?;
    }
    let mut order: Vec<&ProcRequest> = procs.iter().collect();
    order.sort_by_key(|p| p.rank);
    let mut file = SimFile::new();
    for p in order {
        let mut pos = 0;
        for e in p.extents() {
            let bytes: Vec<u8> = p.stream_bytes(pos, e.length).collect();
            file.write(e.offset, &bytes);
            pos += e.length;
        }
    }
    Ok(file)
}

fn find_overlap(procs: &[ProcRequest]) -> Result<(), OracleError> {
    let mut all: Vec<(u64, u64, Rank)> =
        procs.iter().flat_map(|p| p.extents().iter().map(move |e| (e.offset, e.end(), p.rank))).collect();
    all.sort_unstable();
    let mut reach: Option<(u64, Rank)> = None;
    for (start, end, rank) in all {
        if let Some((r_end, owner)) = reach {
            if r_end > start {
                let (first, second) = (owner.min(rank), owner.max(rank));
                return Err(OracleError::Overlap { offset: start, first, second });
            }
        }
        if reach.is_none_or(|(r_end, _)| end > r_end) {
            reach = Some((end, rank));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    /// First offset where the images differ; `None` means unwritten.
    Diverge {
        offset: u64,
        a: Option<u8>,
        b: Option<u8>,
    },
}

impl Comparison {
    pub fn is_equal(&self) -> bool {
        matches!(self, Comparison::Equal)
    }
}

/// Compares two images byte for byte, including which bytes are written.
pub fn compare(a: &SimFile, b: &SimFile) -> Comparison {
    if a == b {
        return Comparison::Equal;
    }
    let mut ia = a.runs().flat_map(|(o, r)| r.iter().enumerate().map(move |(i, &v)| (o + i as u64, v)));
    let mut ib = b.runs().flat_map(|(o, r)| r.iter().enumerate().map(move |(i, &v)| (o + i as u64, v)));
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => return Comparison::Equal,
            (Some((o, v)), None) => return Comparison::Diverge { offset: o, a: Some(v), b: None },
            (None, Some((o, v))) => return Comparison::Diverge { offset: o, a: None, b: Some(v) },
            (Some((oa, va)), Some((ob, vb))) => {
                if oa != ob {
                    let offset = oa.min(ob);
                    return Comparison::Diverge { offset, a: a.byte_at(offset), b: b.byte_at(offset) };
                }
                if va != vb {
                    return Comparison::Diverge { offset: oa, a: Some(va), b: Some(vb) };
                }
            }
        }
    }
}
