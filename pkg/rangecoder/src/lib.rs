//! Range coder over shared 16-bit cdf tables, exchanged through flat files.
//!
//! The library is three small layers: `tables` parses the serialized table
//! set, `coder` runs the integer range coder over entry indices, and
//! `arrays` reads and writes the length-prefixed arrays the caller uses to
//! hand over ids and symbols.

pub mod arrays;
pub mod coder;
pub mod tables;

pub use coder::{decode_stream, encode_stream, CodeError};
pub use tables::{parse_tables, CdfTable, TableError, TOTAL_MASS};
