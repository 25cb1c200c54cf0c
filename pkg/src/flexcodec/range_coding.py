"""Out-of-process bridge to the range coder binary.

The coder is a separate executable exchanging flat files: a table blob (from
bitstream.serialize_tables), a table-id array, and a symbol-index array, all
fixed-layout big-endian.  Arrays are length-prefixed with a u32; ids are u32,
symbol indices i32.  The binary is located via the FLEXCODEC_RANGECODER
environment variable, then PATH, then the crate's build directories.
"""

import os
import shutil
import struct
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .errors import RangeCoderUnavailable

BINARY_NAME = "rangecoder"
ENV_VAR = "FLEXCODEC_RANGECODER"


def find_binary():
    env = os.environ.get(ENV_VAR)
    if env:
        return env if os.path.isfile(env) and os.access(env, os.X_OK) else None
    on_path = shutil.which(BINARY_NAME)
    if on_path:
        return on_path
    root = Path(__file__).resolve().parents[2]
    for sub in ("release", "debug"):
        cand = root / "rangecoder" / "target" / sub / BINARY_NAME
        if cand.is_file() and os.access(cand, os.X_OK):
            return str(cand)
    return None


def write_u32_array(path, values):
    arr = np.asarray(values, dtype=np.int64)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", arr.size))
        f.write(arr.astype(">u4").tobytes())


def write_i32_array(path, values):
    arr = np.asarray(values, dtype=np.int64)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", arr.size))
        f.write(arr.astype(">i4").tobytes())


def read_i32_array(path):
    with open(path, "rb") as f:
        data = f.read()
    (n,) = struct.unpack(">I", data[:4])
    arr = np.frombuffer(data[4:4 + 4 * n], dtype=">i4").astype(np.int64)
    if arr.size != n:
        raise ValueError(f"{path}: expected {n} values, got {arr.size}")
    return arr


class SubprocessRangeCoder:
    """encode/decode by invoking the external binary per call."""

    def __init__(self, binary=None):
        self.binary = binary or find_binary()
        if self.binary is None:
            raise RangeCoderUnavailable(
                f"no {BINARY_NAME} binary; build the crate or set {ENV_VAR}"
            )

    def _run(self, args):
        proc = subprocess.run([self.binary] + args, capture_output=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"{BINARY_NAME} failed ({proc.returncode}): {proc.stderr.decode(errors='replace')}"
            )

    def encode(self, indices, table_ids, table_blob):
        with tempfile.TemporaryDirectory(prefix="rc-") as tmp:
            tmp = Path(tmp)
            (tmp / "tables.bin").write_bytes(table_blob)
            write_u32_array(tmp / "ids.bin", table_ids)
            write_i32_array(tmp / "symbols.bin", indices)
            self._run(["encode", "--tables", str(tmp / "tables.bin"),
                       "--ids", str(tmp / "ids.bin"),
                       "--symbols", str(tmp / "symbols.bin"),
                       "--out", str(tmp / "coded.bin")])
            return (tmp / "coded.bin").read_bytes()

    def decode(self, data, table_ids, table_blob, n):
        table_ids = np.asarray(table_ids)
        if table_ids.size != n:
            raise ValueError(f"need one table id per symbol: {table_ids.size} != {n}")
        with tempfile.TemporaryDirectory(prefix="rc-") as tmp:
            tmp = Path(tmp)
            (tmp / "tables.bin").write_bytes(table_blob)
            write_u32_array(tmp / "ids.bin", table_ids)
            (tmp / "coded.bin").write_bytes(data)
            self._run(["decode", "--tables", str(tmp / "tables.bin"),
                       "--ids", str(tmp / "ids.bin"),
                       "--coded", str(tmp / "coded.bin"),
                       "--out", str(tmp / "symbols.bin")])
            return read_i32_array(tmp / "symbols.bin")


def get_coder(required=False):
    """A coder if the binary exists, else None (or raise when required)."""
    try:
        return SubprocessRangeCoder()
    except RangeCoderUnavailable:
        if required:
            raise
        return None
