//! Parsing and validation of the shared cdf table blob.
//!
//! Wire layout (all big-endian): u32 table count, then per table an i32
//! s_min, a u32 entry count, and that many u16 values storing count-1.
//! Every entry therefore has count >= 1 and each table sums to exactly
//! 2^16, the fixed probability mass the coder divides by.

use thiserror::Error;

pub const TOTAL_MASS: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table blob truncated at offset {0}")]
    Truncated(usize),
    #[error("table {0}: counts sum to {1}, expected {total}", total = TOTAL_MASS)]
    BadMass(usize, u64),
    #[error("table {0} has no entries")]
    Empty(usize),
}

#[derive(Debug, Clone)]
pub struct CdfTable {
    pub s_min: i32,
    pub counts: Vec<u32>,
    /// counts.len() + 1 entries; cdf[0] = 0, cdf[n] = TOTAL_MASS.
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn new(index: usize, s_min: i32, counts: Vec<u32>) -> Result<Self, TableError> {
        if counts.is_empty() {
            return Err(TableError::Empty(index));
        }
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != TOTAL_MASS as u64 {
            return Err(TableError::BadMass(index, sum));
        }
        let mut cdf = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &c in &counts {
            acc += c;
            cdf.push(acc);
        }
        Ok(CdfTable { s_min, counts, cdf })
    }

    pub fn n_entries(&self) -> usize {
        self.counts.len()
    }

    /// Entry index whose cdf slot contains the target; target < TOTAL_MASS.
    pub fn lookup(&self, target: u32) -> usize {
        self.cdf.partition_point(|&c| c <= target) - 1
    }
}

pub fn parse_tables(blob: &[u8]) -> Result<Vec<CdfTable>, TableError> {
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], TableError> {
        if *off + n > blob.len() {
            return Err(TableError::Truncated(*off));
        }
        let s = &blob[*off..*off + n];
        *off += n;
        Ok(s)
    };

    let n_tables = u32::from_be_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut tables = Vec::with_capacity(n_tables);
    for i in 0..n_tables {
        let s_min = i32::from_be_bytes(take(&mut off, 4)?.try_into().unwrap());
        let n_entries = u32::from_be_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let raw = take(&mut off, 2 * n_entries)?;
        let counts: Vec<u32> = raw
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32 + 1)
            .collect();
        tables.push(CdfTable::new(i, s_min, counts)?);
    }
    Ok(tables)
}
