"""Bit-exact container format and fixed-precision cdf tables.

Stream layout: a 30-byte header, then the hyper-latent payload, then the
main-latent payload.  Each payload is a u32 length-prefixed range-coded
section followed by a trailer of raw 16-bit values for escape-coded symbols.
Tables give every in-range symbol at least one count out of a 2^16 total and
reserve a final escape entry; out-of-range values encode the escape entry and
push (s + 32768) as two raw bytes into the trailer, so the entropy coder
itself only ever sees in-range indices.

Conditional-Gaussian tables are bucketed: sigma is snapped to one of 64
logarithmic buckets spanning [sigma_floor, 256] so encoder and decoder build
byte-identical tables from the decoded hyper-latent alone.  Table counts are
rounded probabilities, so table rate differs from the exact bucketed pmf rate
by at most log2(1 + 2*s_range/2^16) bits per symbol (the count perturbation
is at most rounding plus the deficit repair, both bounded by the entry count
over the total mass).
"""

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from scipy.special import ndtr

from .errors import (
    FormatError,
    ModelMismatchError,
    ParseError,
    RangeOverflowError,
    RateAccountingError,
)
from .models import Y_DOWN, Z_DOWN
from .quantization import DELTA_Z_CANDIDATES, PMF_FLOOR

MAGIC = b"CEDT"
VERSION = 1
HEADER_LEN = 30

MASS_BITS = 16
TOTAL_MASS = 1 << MASS_BITS

SIGMA_BUCKETS = 64
SIGMA_MAX = 256.0
SYMBOL_RANGE_CAP = 255
SIGMA_SPREAD = 16.0

ESCAPE_RAW_BIAS = 32768
ESCAPE_RAW_BITS = 16


@dataclass
class Header:
    model_id: bytes
    height: int
    width: int
    delta_z_index: int
    delta_y: float
    z_payload_len: int = 0
    y_payload_len: int = 0
    version: int = VERSION

    def __post_init__(self):
        if len(self.model_id) != 8:
            raise FormatError("model_id must be 8 bytes")
        if not 0 <= self.delta_z_index < len(DELTA_Z_CANDIDATES):
            raise FormatError(f"delta_z_index {self.delta_z_index} out of range")
        if not (0 < self.height < 65536 and 0 < self.width < 65536):
            raise FormatError("height/width must fit unsigned 16-bit")
        # snap to the binary32 value the wire carries
        self.delta_y = float(np.float32(self.delta_y))
        if not math.isfinite(self.delta_y) or self.delta_y <= 0:
            raise FormatError(f"delta_y must be positive finite, got {self.delta_y}")


def serialize_header(h):
    return (
        MAGIC
        + struct.pack(">B", h.version)
        + h.model_id
        + struct.pack(">HHB", h.height, h.width, h.delta_z_index)
        + struct.pack("<f", h.delta_y)
        + struct.pack(">II", h.z_payload_len, h.y_payload_len)
    )


def parse_header(data):
    if len(data) < HEADER_LEN:
        raise ParseError(len(data), "stream shorter than header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version = data[4]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    model_id = data[5:13]
    height, width, dz_index = struct.unpack(">HHB", data[13:18])
    (delta_y,) = struct.unpack("<f", data[18:22])
    z_len, y_len = struct.unpack(">II", data[22:30])
    return Header(model_id=model_id, height=height, width=width,
                  delta_z_index=dz_index, delta_y=delta_y,
                  z_payload_len=z_len, y_payload_len=y_len, version=version)


def serialize(header, z_bytes, y_bytes):
    header.z_payload_len = len(z_bytes)
    header.y_payload_len = len(y_bytes)
    return serialize_header(header) + bytes(z_bytes) + bytes(y_bytes)


def parse(data):
    header = parse_header(data)
    z_end = HEADER_LEN + header.z_payload_len
    y_end = z_end + header.y_payload_len
    if len(data) < y_end:
        raise ParseError(len(data), f"payloads truncated, need {y_end} bytes")
    return header, data[HEADER_LEN:z_end], data[z_end:y_end]


def _repair_counts(c):
    """Renormalize rounded counts to exactly TOTAL_MASS.

    The one-count floor on near-zero entries leaves a surplus; it is spread
    over the non-modal entries in proportion to their mass so the mode's
    coded probability stays exact, each donor floored at one count.  The
    mode absorbs only what the others cannot.
    """
    diff = TOTAL_MASS - int(c.sum())
    if diff == 0:
        return c
    j_max = int(np.argmax(c))
    others = np.flatnonzero(np.arange(c.size) != j_max)
    room = c[others] - 1 if diff < 0 else np.full(others.size, abs(diff))
    weights = (c[others] - 1).astype(np.float64)
    if weights.sum() > 0 and others.size:
        want = weights / weights.sum() * abs(diff)
        take = np.minimum(np.floor(want).astype(np.int64), room)
        rem = abs(diff) - int(take.sum())
        # leftover units go to the donors with the largest fractional claim
        order = np.argsort(-(want - np.floor(want)), kind="stable")
        for i in order:
            if rem == 0:
                break
            if take[i] < room[i]:
                extra = min(rem, int(room[i] - take[i]))
                take[i] += extra
                rem -= extra
        c[others] += take if diff > 0 else -take
        diff = TOTAL_MASS - int(c.sum())
    if diff != 0:
        if diff < 0 and c[j_max] + diff < 1:
            raise RangeOverflowError("cannot renormalize counts")
        c[j_max] += diff
    return c


@dataclass
class CdfTable:
    """Counts over contiguous symbols [s_min, s_min + n - 1] summing to 2^16.

    When has_escape is set the final entry is the escape bucket rather than a
    symbol.  probs keeps the pre-quantization probabilities for rate
    diagnostics; it never reaches the wire.
    """

    s_min: int
    counts: np.ndarray
    has_escape: bool = True
    probs: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_probs(cls, probs, s_min, has_escape=True):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or p.sum() <= 0:
            raise ValueError("probs must be a non-empty non-negative vector")
        if p.size > TOTAL_MASS:
            raise RangeOverflowError(f"{p.size} entries exceed total mass {TOTAL_MASS}")
        p = p / p.sum()
        c = np.maximum(np.floor(p * TOTAL_MASS + 0.5).astype(np.int64), 1)
        c = _repair_counts(c)
        return cls(s_min=s_min, counts=c, has_escape=has_escape, probs=p)

    @property
    def n_entries(self):
        return len(self.counts)

    @property
    def n_symbols(self):
        return self.n_entries - 1 if self.has_escape else self.n_entries

    @property
    def escape_index(self):
        return self.n_entries - 1 if self.has_escape else None

    def symbol_index(self, s):
        off = s - self.s_min
        if 0 <= off < self.n_symbols:
            return off
        if self.has_escape:
            return self.escape_index
        raise RateAccountingError(f"symbol {s} outside table range, no escape")


def serialize_tables(tables):
    """Wire form shared with the range coder: per table s_min, count, entries."""
    out = [struct.pack(">I", len(tables))]
    for t in tables:
        out.append(struct.pack(">iI", t.s_min, t.n_entries))
        out.append((t.counts.astype(np.int64) - 1).astype(">u2").tobytes())
    return b"".join(out)


def parse_tables(blob):
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise ParseError(off, "table blob truncated")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (n_tables,) = take(">I")
    tables = []
    for _ in range(n_tables):
        s_min, n_entries = take(">iI")
        end = off + 2 * n_entries
        if end > len(blob):
            raise ParseError(off, "table entries truncated")
        counts = np.frombuffer(blob[off:end], dtype=">u2").astype(np.int64) + 1
        off = end
        tables.append(CdfTable(s_min=s_min, counts=counts))
    return tables


def sigma_bucket_index(sigma, sigma_floor):
    """Logarithmic bucket of each sigma; numpy int64 array."""
    s = np.asarray(sigma, dtype=np.float64)
    step = (math.log(SIGMA_MAX) - math.log(sigma_floor)) / SIGMA_BUCKETS
    idx = np.floor((np.log(np.maximum(s, sigma_floor)) - math.log(sigma_floor)) / step)
    return np.clip(idx, 0, SIGMA_BUCKETS - 1).astype(np.int64)


def sigma_bucket_rep(bucket, sigma_floor):
    """Representative sigma at the bucket's geometric center."""
    step = (math.log(SIGMA_MAX) - math.log(sigma_floor)) / SIGMA_BUCKETS
    return math.exp(math.log(sigma_floor) + (bucket + 0.5) * step)


def _symbol_range(sigma, delta):
    r = int(math.ceil(SIGMA_SPREAD * sigma / delta))
    return max(1, min(SYMBOL_RANGE_CAP, r))


def build_y_tables(delta_y, sigma_floor):
    """One Gaussian table per sigma bucket, float64 throughout."""
    tables = []
    for b in range(SIGMA_BUCKETS):
        sig = sigma_bucket_rep(b, sigma_floor)
        r = _symbol_range(sig, delta_y)
        s = np.arange(-r, r + 1, dtype=np.float64)
        upper = ndtr((s * delta_y + delta_y / 2) / sig)
        lower = ndtr((s * delta_y - delta_y / 2) / sig)
        pmf = upper - lower
        tail = max(0.0, 1.0 - float(pmf.sum()))
        tables.append(CdfTable.from_probs(np.append(pmf, tail), s_min=-r))
    return tables


def build_z_tables(model, delta_z):
    """One table per hyper channel from the learned factorized cdf.

    Ranges come from scanning the cdf outward until the missed mass is below
    2^-20, so they depend only on model parameters and delta_z.
    """
    channels = model.m_hyper
    grid = np.arange(-SYMBOL_RANGE_CAP, SYMBOL_RANGE_CAP + 1, dtype=np.float64)
    edges = torch.from_numpy(
        np.concatenate([grid * delta_z - delta_z / 2, [SYMBOL_RANGE_CAP * delta_z + delta_z / 2]])
    )
    with torch.no_grad():
        cdf = model.factorized.cdf(
            edges.unsqueeze(0).expand(channels, -1).double()
        ).numpy()
    pmf_full = np.diff(cdf, axis=1)  # [C, 511] over symbols -255..255

    tables = []
    center = SYMBOL_RANGE_CAP
    for c in range(channels):
        r = 1
        while r < SYMBOL_RANGE_CAP:
            if 1.0 - float(pmf_full[c, center - r:center + r + 1].sum()) < 2.0 ** -20:
                break
            r += 1
        pmf = pmf_full[c, center - r:center + r + 1].clip(min=0.0)
        tail = max(0.0, 1.0 - float(pmf.sum()))
        tables.append(CdfTable.from_probs(np.append(pmf, tail), s_min=-r))
    return tables


def build_cdf_tables(model, delta_y, delta_z):
    """Z tables first (ids 0..C-1), then the 64 y bucket tables."""
    z_tables = build_z_tables(model, delta_z)
    y_tables = build_y_tables(delta_y, model.sigma_floor)
    return z_tables + y_tables, len(z_tables)


def theoretical_rate_report(symbols, table_ids, tables):
    """Bits implied by table counts; escapes cost their entry plus 16 raw bits."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    if symbols.shape != table_ids.shape:
        raise ValueError("symbols and table_ids must align")
    bits = 0.0
    for tid in np.unique(table_ids):
        t = tables[int(tid)]
        s = symbols[table_ids == tid]
        off = s - t.s_min
        in_range = (off >= 0) & (off < t.n_symbols)
        if (~in_range).any() and not t.has_escape:
            raise RateAccountingError("out-of-range symbol for escape-free table")
        counts = np.where(in_range, t.counts[np.clip(off, 0, t.n_symbols - 1)],
                          t.counts[-1] if t.has_escape else 1)
        bits += float(-np.log2(counts / TOTAL_MASS).sum())
        bits += ESCAPE_RAW_BITS * int((~in_range).sum())
    return bits


def exact_bucketed_rate(symbols, table_ids, tables):
    """Bits under the pre-quantization table probabilities (float64 pmf).

    The reference side of the documented table-rounding bound; requires
    tables built in-process (probs present).
    """
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    bits = 0.0
    for tid in np.unique(table_ids):
        t = tables[int(tid)]
        if t.probs is None:
            raise RateAccountingError("table has no stored probabilities")
        s = symbols[table_ids == tid]
        off = s - t.s_min
        in_range = (off >= 0) & (off < t.n_symbols)
        p = np.where(in_range, t.probs[np.clip(off, 0, t.n_symbols - 1)],
                     t.probs[-1])
        bits += float(-np.log2(np.maximum(p, 1e-30)).sum())
        bits += ESCAPE_RAW_BITS * int((~in_range).sum())
    return bits


def table_rate_bound(table_ids, tables):
    """Documented bound on |table rate - exact bucketed rate| in bits."""
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    bound = 0.0
    for tid in np.unique(table_ids):
        t = tables[int(tid)]
        n = int((table_ids == tid).sum())
        bound += n * math.log2(1.0 + 2.0 * t.n_entries / TOTAL_MASS)
    return bound


def rate_consistency_bound(result, model):
    """Bound on |continuous theoretical rate - table rate| for a stream, bits.

    The continuous rate evaluates the floored pmf at the exact per-element
    sigma; the table rate snaps sigma to its bucket and probabilities to
    counts.  The bound is built from table-side quantities only, so it can
    catch accounting bugs rather than restate the measured gap.  Terms:

    - count rounding: table_rate_bound over all coded symbols;
    - sigma bucketing, main latent only: twice the larger log2-pmf deviation
      between the bucket representative and either bucket edge at the coded
      symbol.  The pmf of a fixed bin is unimodal in sigma, so a monotone
      stretch is covered by the edge deviations and an interior peak by the
      factor two;
    - blanket of 30 bits for any in-range symbol whose table probability is
      below 2^-13 and for top-bucket symbols (sigma is unbounded above):
      there both costs lie in [0, 30] once the pmf floor binds;
    - escapes: 32 bits each (16..32 raw escape cost against a floored pmf
      cost of 0..30);
    - evaluation precision: 0.02 bits per symbol, covering float32 cdf
      evaluation in the continuous rate against float64 tables.
    """
    low_prob = 2.0 ** -13
    blanket_bits = 30.0
    escape_bits_bound = 32.0
    eval_bits = 0.02

    z_ids, y_ids, tables = stream_table_ids(result, model)
    n_z_tables = len(tables) - SIGMA_BUCKETS
    delta_y = float(result.steps.delta_y)
    floor = model.sigma_floor
    step = (math.log(SIGMA_MAX) - math.log(floor)) / SIGMA_BUCKETS

    all_ids = np.concatenate([z_ids, y_ids])
    all_syms = np.concatenate([
        result.symbols_z.numpy().astype(np.int64).ravel(),
        result.symbols_y.numpy().astype(np.int64).ravel(),
    ])
    bound = table_rate_bound(all_ids, tables)
    bound += eval_bits * all_syms.size

    s_min = np.array([t.s_min for t in tables], dtype=np.int64)
    n_sym = np.array([t.n_symbols for t in tables], dtype=np.int64)
    off = all_syms - s_min[all_ids]
    in_range = (off >= 0) & (off < n_sym[all_ids])
    bound += escape_bits_bound * int((~in_range).sum())

    probs = np.zeros(all_syms.size, dtype=np.float64)
    for tid in np.unique(all_ids):
        sel = in_range & (all_ids == tid)
        probs[sel] = tables[int(tid)].probs[off[sel]]

    bucket = all_ids - n_z_tables
    is_y = bucket >= 0
    top = is_y & (bucket == SIGMA_BUCKETS - 1)
    low = in_range & ((probs < low_prob) | top)
    bound += blanket_bits * int(low.sum())

    edge = is_y & in_range & ~low
    if edge.any():
        b = bucket[edge].astype(np.float64)
        s = all_syms[edge].astype(np.float64)
        logs = math.log(floor)

        def log2_pmf(sigma):
            hi = ndtr((s * delta_y + delta_y / 2.0) / sigma)
            lo = ndtr((s * delta_y - delta_y / 2.0) / sigma)
            return np.log2(np.maximum(hi - lo, PMF_FLOOR))

        lp_rep = log2_pmf(np.exp(logs + (b + 0.5) * step))
        dev_lo = np.abs(log2_pmf(np.exp(logs + b * step)) - lp_rep)
        dev_hi = np.abs(log2_pmf(np.exp(logs + (b + 1.0) * step)) - lp_rep)
        bound += 2.0 * float(np.maximum(dev_lo, dev_hi).sum())
    return bound


def _encode_payload(symbols, table_ids, tables, blob, coder):
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    s_min = np.array([t.s_min for t in tables], dtype=np.int64)
    n_sym = np.array([t.n_symbols for t in tables], dtype=np.int64)
    off = symbols - s_min[table_ids]
    in_range = (off >= 0) & (off < n_sym[table_ids])
    indices = np.where(in_range, off, n_sym[table_ids])
    raws = symbols[~in_range] + ESCAPE_RAW_BIAS
    if ((raws < 0) | (raws > 65535)).any():
        raise RangeOverflowError("escaped symbol outside 16-bit raw range")
    coded = coder.encode(indices.astype(np.int32), table_ids.astype(np.uint32), blob)
    trailer = raws.astype(">u2").tobytes()
    return struct.pack(">I", len(coded)) + coded + trailer


def _decode_payload(payload, table_ids, tables, blob, coder):
    if len(payload) < 4:
        raise ParseError(0, "payload shorter than its length prefix")
    (rc_len,) = struct.unpack(">I", payload[:4])
    if 4 + rc_len > len(payload):
        raise ParseError(4, "range-coded section truncated")
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    indices = np.asarray(
        coder.decode(payload[4:4 + rc_len], table_ids.astype(np.uint32), blob,
                     len(table_ids)),
        dtype=np.int64,
    )
    s_min = np.array([t.s_min for t in tables], dtype=np.int64)
    n_sym = np.array([t.n_symbols for t in tables], dtype=np.int64)
    escaped = indices == n_sym[table_ids]
    symbols = s_min[table_ids] + indices
    trailer = payload[4 + rc_len:]
    n_esc = int(escaped.sum())
    if len(trailer) != 2 * n_esc:
        raise ParseError(4 + rc_len, f"expected {2 * n_esc} trailer bytes, got {len(trailer)}")
    if n_esc:
        raws = np.frombuffer(trailer, dtype=">u2").astype(np.int64) - ESCAPE_RAW_BIAS
        symbols[escaped] = raws
    return symbols


def _z_table_ids(z_shape):
    b, c, h, w = z_shape
    return np.repeat(np.arange(c, dtype=np.int64), h * w)[None].repeat(b, 0).ravel()


def _y_table_ids(sigma, sigma_floor, z_table_count):
    return z_table_count + sigma_bucket_index(sigma, sigma_floor).ravel()


def _padded_dims(height, width):
    ph = (height + Z_DOWN - 1) // Z_DOWN * Z_DOWN
    pw = (width + Z_DOWN - 1) // Z_DOWN * Z_DOWN
    return ph, pw


def _delta_z_index(delta_z):
    diffs = [abs(delta_z - c) for c in DELTA_Z_CANDIDATES]
    i = diffs.index(min(diffs))
    if diffs[i] > 1e-9:
        raise FormatError(f"delta_z {delta_z} is not in the candidate set")
    return i


def finalize_image(x_bar, height, width):
    """Clamp to pixel range and crop padding; the decoder-visible image."""
    return x_bar[..., :height, :width].clamp(0.0, 255.0)


@dataclass
class DecodedStream:
    header: Header
    image: torch.Tensor
    symbols_y: torch.Tensor
    symbols_z: torch.Tensor


def compress(result, model, coder, height=None, width=None):
    """EditResult -> .cedt bytes.  Needs the external range coder."""
    s_y = result.symbols_y
    s_z = result.symbols_z
    gh, gw = s_y.shape[-2], s_y.shape[-1]
    height = height or gh * Y_DOWN
    width = width or gw * Y_DOWN

    tables, n_z_tables = build_cdf_tables(model, result.steps.delta_y,
                                          result.steps.delta_z)
    blob = serialize_tables(tables)

    z_ids = _z_table_ids(s_z.shape)
    z_payload = _encode_payload(s_z.numpy(), z_ids, tables, blob, coder)

    with torch.no_grad():
        z_hat = s_z.float() * result.steps.delta_z
        _, sigma = model.hyper_synthesize(z_hat)
    y_ids = _y_table_ids(sigma.numpy(), model.sigma_floor, n_z_tables)
    y_payload = _encode_payload(s_y.numpy(), y_ids, tables, blob, coder)

    header = Header(model_id=model.theta_id(), height=height, width=width,
                    delta_z_index=_delta_z_index(result.steps.delta_z),
                    delta_y=result.steps.delta_y)
    return serialize(header, z_payload, y_payload)


def decompress(data, model, coder):
    """.cedt bytes -> DecodedStream with the reconstructed image."""
    header, z_payload, y_payload = parse(data)
    if header.model_id != model.theta_id():
        raise ModelMismatchError(
            f"stream written for decoder {header.model_id.hex()}, "
            f"loaded {model.theta_id().hex()}"
        )
    delta_z = DELTA_Z_CANDIDATES[header.delta_z_index]
    delta_y = header.delta_y
    ph, pw = _padded_dims(header.height, header.width)
    z_shape = (1, model.m_hyper, ph // Z_DOWN, pw // Z_DOWN)
    y_shape = (1, model.m, ph // Y_DOWN, pw // Y_DOWN)

    tables, n_z_tables = build_cdf_tables(model, delta_y, delta_z)
    blob = serialize_tables(tables)

    z_ids = _z_table_ids(z_shape)
    s_z = torch.from_numpy(
        _decode_payload(z_payload, z_ids, tables, blob, coder).reshape(z_shape).copy()
    ).to(torch.int32)

    with torch.no_grad():
        z_hat = s_z.float() * delta_z
        _, sigma = model.hyper_synthesize(z_hat)
        y_ids = _y_table_ids(sigma.numpy(), model.sigma_floor, n_z_tables)
        s_y = torch.from_numpy(
            _decode_payload(y_payload, y_ids, tables, blob, coder).reshape(y_shape).copy()
        ).to(torch.int32)
        y_hat = s_y.float() * delta_y
        image = finalize_image(model.synthesize(y_hat), header.height, header.width)

    return DecodedStream(header=header, image=image, symbols_y=s_y, symbols_z=s_z)


def stream_table_ids(result, model):
    """(z_ids, y_ids, tables) for rate accounting without any coder built."""
    tables, n_z_tables = build_cdf_tables(model, result.steps.delta_y,
                                          result.steps.delta_z)
    z_ids = _z_table_ids(result.symbols_z.shape)
    with torch.no_grad():
        z_hat = result.symbols_z.float() * result.steps.delta_z
        _, sigma = model.hyper_synthesize(z_hat)
    y_ids = _y_table_ids(sigma.numpy(), model.sigma_floor, n_z_tables)
    return z_ids, y_ids, tables
