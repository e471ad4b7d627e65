//! Sparse in-memory file image.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("offset {offset} has never been written")]
pub struct Unwritten {
    pub offset: u64,
}

/// Written bytes stored as maximal runs keyed by start offset. Adjacent
/// runs are always merged, so two images with the same content have the
/// same run structure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimFile {
    runs: BTreeMap<u64, Vec<u8>>,
}

impl SimFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Total number of written bytes.
    pub fn written_bytes(&self) -> u64 {
        self.runs.values().map(|r| r.len() as u64).sum()
    }

    /// Written runs in offset order.
    pub fn runs(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.runs.iter().map(|(&o, r)| (o, r.as_slice()))
    }

    /// First written byte in `[offset, offset + len)`, if any.
    pub fn first_written_in(&self, offset: u64, len: u64) -> Option<u64> {
        let end = offset + len;
        if let Some((&o, r)) = self.runs.range(..=offset).next_back() {
            if o + r.len() as u64 > offset {
                return Some(offset);
            }
        }
        self.runs.range(offset..end).next().map(|(&o, _)| o)
    }

    /// Writes `bytes` at `offset`, replacing anything already there.
    pub fn write(&mut self, offset: u64, bytes: &[u8]) {
        if bytes.is_empty() {
            return;
        }
        let end = offset + bytes.len() as u64;
        // runs intersecting or touching [offset, end]
        let mut touched: Vec<u64> = Vec::new();
        if let Some((&o, r)) = self.runs.range(..offset).next_back() {
            if o + r.len() as u64 >= offset {
                touched.push(o);
            }
        }
        touched.extend(self.runs.range(offset..=end).map(|(&o, _)| o));

        let mut start = offset;
        let mut buf: Vec<u8> = Vec::new();
        let mut tail: Vec<u8> = Vec::new();
        for o in touched {
            let run = self.runs.remove(&o).expect("collected above");
            let run_end = o + run.len() as u64;
            if run_end > end {
                tail = run[(end - o) as usize..].to_vec();
            }
            if o < offset {
                start = o;
                buf = run;
                buf.truncate((offset - o) as usize);
            }
        }
        buf.extend_from_slice(bytes);
        buf.extend_from_slice(&tail);
        self.runs.insert(start, buf);
    }

    /// Writes only if none of the target bytes were written before;
    /// otherwise returns the first conflicting offset.
    pub fn write_new(&mut self, offset: u64, bytes: &[u8]) -> Result<(), u64> {
        if let Some(hit) = self.first_written_in(offset, bytes.len() as u64) {
            return Err(hit);
        }
        self.write(offset, bytes);
        Ok(())
    }

    pub fn read(&self, offset: u64, len: u64) -> Result<Vec<u8>, Unwritten> {
        let mut out = Vec::with_capacity(len as usize);
        let end = offset + len;
        let mut at = offset;
        while at < end {
            let (o, r) = self
                .runs
                .range(..=at)
                .next_back()
                .filter(|(&o, r)| o + r.len() as u64 > at)
                .ok_or(Unwritten { offset: at })?;
            let run_end = (*o + r.len() as u64).min(end);
            out.extend_from_slice(&r[(at - o) as usize..(run_end - o) as usize]);
            at = run_end;
        }
        Ok(out)
    }

    pub fn byte_at(&self, offset: u64) -> Option<u8> {
        self.runs.range(..=offset).next_back().and_then(|(&o, r)| r.get((offset - o) as usize).copied())
    }

    /// Dumps all runs as little-endian `(offset: u64, length: u64)` headers,
    /// each followed by its bytes.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (o, r) in self.runs() {
            w.write_all(&o.to_le_bytes())?;
            w.write_all(&(r.len() as u64).to_le_bytes())?;
            w.write_all(r)?;
        }
        w.flush()
    }

    pub fn read_sidecar<R: Read>(mut r: R) -> io::Result<Self> {
        let mut file = SimFile::new();
        let mut header = [0u8; 16];
        loop {
            match r.read_exact(&mut header[..8]) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(file),
                Err(e) => return Err(e),
            }
            r.read_exact(&mut header[8..])?;
            let offset = u64::from_le_bytes(header[..8].try_into().unwrap());
            let len = u64::from_le_bytes(header[8..].try_into().unwrap());
            let mut bytes = vec![0u8; len as usize];
            r.read_exact(&mut bytes)?;
            file.write(offset, &bytes);
        }
    }
}
