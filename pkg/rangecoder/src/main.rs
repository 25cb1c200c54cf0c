//! File-based CLI: encode and decode symbol-index streams under a shared
//! table blob.  Exit code 0 on success; errors go to stderr.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use rangecoder::{arrays, decode_stream, encode_stream, parse_tables};

#[derive(Parser)]
#[command(name = "rangecoder", about = "Range coder over 16-bit cdf tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a symbol-index array to a coded byte stream.
    Encode {
        /// Serialized cdf table set
        #[arg(long)]
        tables: PathBuf,
        /// Per-symbol table ids (u32 array)
        #[arg(long)]
        ids: PathBuf,
        /// Symbol indices to encode (i32 array)
        #[arg(long)]
        symbols: PathBuf,
        /// Output path for the coded bytes
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a coded byte stream back to symbol indices.
    Decode {
        /// Serialized cdf table set
        #[arg(long)]
        tables: PathBuf,
        /// Per-symbol table ids (u32 array); one per decoded symbol
        #[arg(long)]
        ids: PathBuf,
        /// Coded bytes from encode
        #[arg(long)]
        coded: PathBuf,
        /// Output path for the decoded indices (i32 array)
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode { tables, ids, symbols, out } => {
            let blob = std::fs::read(&tables)
                .with_context(|| format!("reading {}", tables.display()))?;
            let table_set = parse_tables(&blob).context("parsing table blob")?;
            let ids = arrays::read_u32_array(&ids)?;
            let symbols = arrays::read_i32_array(&symbols)?;
            let coded = encode_stream(&symbols, &ids, &table_set)?;
            std::fs::write(&out, coded)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Decode { tables, ids, coded, out } => {
            let blob = std::fs::read(&tables)
                .with_context(|| format!("reading {}", tables.display()))?;
            let table_set = parse_tables(&blob).context("parsing table blob")?;
            let ids = arrays::read_u32_array(&ids)?;
            let data = std::fs::read(&coded)
                .with_context(|| format!("reading {}", coded.display()))?;
            let n = ids.len();
            let symbols = decode_stream(&data, &ids, &table_set, n)?;
            arrays::write_i32_array(&out, &symbols)
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}
