//! Carry-less 32-bit range coder at 16-bit probability precision.
//!
//! All probability totals are exactly 2^16, so the per-symbol range split is
//! a shift, never a division.  Renormalization emits the top byte once it
//! can no longer change; when the range underflows 2^16 before that happens
//! it is truncated to the next 2^16 boundary, which sacrifices a fraction of
//! a bit instead of tracking carries.  Integer arithmetic only.

use crate::tables::{CdfTable, TOTAL_MASS};
use thiserror::Error;

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("need one table id per symbol: {0} ids, {1} symbols")]
    LengthMismatch(usize, usize),
    #[error("symbol {pos}: table id {id} out of range ({n} tables)")]
    BadTableId { pos: usize, id: u32, n: usize },
    #[error("symbol {pos}: index {index} outside table {id} ({n} entries)")]
    BadIndex { pos: usize, index: i32, id: u32, n: usize },
}

pub struct Encoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder { low: 0, range: u32::MAX, out: Vec::new() }
    }

    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq >= 1 && cum + freq <= TOTAL_MASS);
        let r = self.range >> 16;
        self.low += cum * r;
        self.range = freq * r;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
                // top byte settled
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Decoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Decoder { low: 0, range: u32::MAX, code: 0, data, pos: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        // the flush is minimal; reads past the end mirror implicit zeros
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative-mass position of the pending symbol, in [0, 2^16).
    pub fn target(&self) -> u32 {
        let r = self.range >> 16;
        (self.code.wrapping_sub(self.low) / r).min(TOTAL_MASS - 1)
    }

    pub fn advance(&mut self, cum: u32, freq: u32) {
        let r = self.range >> 16;
        self.low += cum * r;
        self.range = freq * r;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
    }
}

fn check_stream(
    indices: &[i32],
    ids: &[u32],
    tables: &[CdfTable],
) -> Result<(), CodeError> {
    if ids.len() != indices.len() {
        return Err(CodeError::LengthMismatch(ids.len(), indices.len()));
    }
    for (pos, (&index, &id)) in indices.iter().zip(ids).enumerate() {
        let t = tables
            .get(id as usize)
            .ok_or(CodeError::BadTableId { pos, id, n: tables.len() })?;
        if index < 0 || index as usize >= t.n_entries() {
            return Err(CodeError::BadIndex { pos, index, id, n: t.n_entries() });
        }
    }
    Ok(())
}

/// Encode entry indices (one table id per symbol) to a flushed byte stream.
pub fn encode_stream(
    indices: &[i32],
    ids: &[u32],
    tables: &[CdfTable],
) -> Result<Vec<u8>, CodeError> {
    check_stream(indices, ids, tables)?;
    let mut enc = Encoder::new();
    for (&index, &id) in indices.iter().zip(ids) {
        let t = &tables[id as usize];
        let i = index as usize;
        enc.encode(t.cdf[i], t.counts[i]);
    }
    Ok(enc.finish())
}

/// Decode n entry indices; ids must match the encoding call exactly.
pub fn decode_stream(
    data: &[u8],
    ids: &[u32],
    tables: &[CdfTable],
    n: usize,
) -> Result<Vec<i32>, CodeError> {
    if ids.len() != n {
        return Err(CodeError::LengthMismatch(ids.len(), n));
    }
    let mut dec = Decoder::new(data);
    let mut out = Vec::with_capacity(n);
    for (pos, &id) in ids.iter().enumerate() {
        let t = tables
            .get(id as usize)
            .ok_or(CodeError::BadTableId { pos, id, n: tables.len() })?;
        let i = t.lookup(dec.target());
        dec.advance(t.cdf[i], t.counts[i]);
        out.push(i as i32);
    }
    Ok(out)
}
