"""Binary datacube format.

Layout (little-endian)::

    offset  size  field
    0       8     magic b"CHRPCUBE"
    8       4     version (uint32, currently 1)
    12      4     L, number of chirp sequences (uint32)
    16      4     M, chirps per sequence (uint32)
    20      4     N, fast-time samples per chirp (uint32)
    24      8     sample rate f_s in Hz (float64)
    32      8     chirp repetition interval T_ri in s (float64)
    40      8     byte offset of the sequence-offset table (uint64)
    48      16    reserved, zero
    64      8L    sequence offsets T_l in s (float64), at the table offset
    ...     8LMN  samples as interleaved float32 I/Q, l-major, then m, then n

Samples are stored at single precision, so a cube survives
store -> load bit-exactly once it has been rounded to complex64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from chirpjoint.scenario import RadarScenario
from chirpjoint.synth import RawDataCube

MAGIC = b"CHRPCUBE"
VERSION = 1
HEADER = struct.Struct("<8sIIIIddQ16x")
assert HEADER.size == 64


class CubeFormatError(ValueError):
    pass


class BadMagicError(CubeFormatError):
    pass


class TruncatedPayloadError(CubeFormatError):
    pass


class HeaderMismatchError(CubeFormatError):
    pass


def store_cube(c: RawDataCube, path) -> None:
    L, M, N = c.samples.shape
    header = HEADER.pack(MAGIC, VERSION, L, M, N, c.scenario.waveform.sample_rate_hz,
                         c.scenario.waveform.chirp_repetition_interval_s, HEADER.size)
    offsets = np.asarray(c.scenario.plan.sequence_offsets_s, dtype="<f8")
    payload = np.ascontiguousarray(c.samples, dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(offsets.tobytes())
        fh.write(payload.tobytes())


def read_header(path) -> dict:
    raw = Path(path).read_bytes()[:HEADER.size]
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a datacube file (bad magic bytes)")
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated at {len(raw)} bytes")
    magic, version, L, M, N, fs, t_ri, table = HEADER.unpack(raw)
    if version != VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    return {"L": L, "M": M, "N": N, "sample_rate_hz": fs, "chirp_repetition_interval_s": t_ri,
            "offset_table": table}


def load_cube(path, s: RadarScenario) -> RawDataCube:
    """Read a cube written by :func:`store_cube` and check it against ``s``."""
    raw = Path(path).read_bytes()
    hdr = read_header(path)
    L, M, N = hdr["L"], hdr["M"], hdr["N"]
    expected = {
        "L": s.plan.num_sequences,
        "M": s.plan.chirps_per_sequence,
        "N": s.waveform.fast_time_samples,
        "sample_rate_hz": s.waveform.sample_rate_hz,
        "chirp_repetition_interval_s": s.waveform.chirp_repetition_interval_s,
    }
    for key, want in expected.items():
        if hdr[key] != want:
            raise HeaderMismatchError(f"{key}: file header says {hdr[key]}, scenario says {want}")

    table = hdr["offset_table"]
    payload_start = table + 8 * L
    payload_len = 8 * L * M * N
    if len(raw) < payload_start + payload_len:
        raise TruncatedPayloadError(f"{path}: expected {payload_start + payload_len} bytes, got {len(raw)}")
    offsets = np.frombuffer(raw, dtype="<f8", count=L, offset=table)
    if not np.array_equal(offsets, np.asarray(s.plan.sequence_offsets_s)):
        raise HeaderMismatchError(f"sequence offsets: file header says {offsets.tolist()}, "
                                  f"scenario says {list(s.plan.sequence_offsets_s)}")
    samples = np.frombuffer(raw, dtype="<c8", count=L * M * N, offset=payload_start)
    return RawDataCube(samples.reshape(L, M, N).copy(), s)
