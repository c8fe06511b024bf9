"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic "EEM1" | u32 version | 4-byte model tag | u32 H | u32 D | u32 S
    | u64 N | u64 iteration | u64 master seed
    | u32 array count | arrays sorted by name:
        u16 name length | name utf-8 | u32 ndim | u64 dims... | f64-LE data
    | u64 payload bytes | bit-packed K-sets (N, S, ceil(H/8))
    | u64 trace length | trace rows as (f64 iteration, f64 F/N)

Serialization is canonical, so save -> load -> save reproduces the file
byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .learning import FreeEnergyTrace
from .models import kind_of
from .models.bsc import BscParams
from .models.noisyor import NoisyOrParams
from .models.sssc import SsscParams

MAGIC = b"EEM1"
VERSION = 1
_TAGS = {"nor": b"NOR ", "bsc": b"BSC ", "sssc": b"SSSC"}
_KINDS = {v: k for k, v in _TAGS.items()}


@dataclass
class CheckpointState:
    params: object
    states: np.ndarray  # (N, S, H) uint8
    iteration: int
    seed: int
    trace: FreeEnergyTrace = field(default_factory=FreeEnergyTrace)

    @property
    def kind(self) -> str:
        return kind_of(self.params)


def _param_arrays(params) -> dict[str, np.ndarray]:
    kind = kind_of(params)
    if kind == "nor":
        return {"pi": params.pi, "W": params.W}
    if kind == "bsc":
        return {"pi": np.array([params.pi]), "sigma2": np.array([params.sigma2]), "W": params.W}
    return {
        "pi": params.pi,
        "sigma2": np.array([params.sigma2]),
        "W": params.W,
        "mu": params.mu,
        "Psi": params.Psi,
        "mu_psi_frozen": np.array([1.0 if params.mu_psi_frozen else 0.0]),
    }


def _params_from_arrays(kind: str, arrays: dict[str, np.ndarray]):
    if kind == "nor":
        return NoisyOrParams(pi=arrays["pi"], W=arrays["W"])
    if kind == "bsc":
        return BscParams(pi=arrays["pi"][0], sigma2=arrays["sigma2"][0], W=arrays["W"])
    return SsscParams(
        pi=arrays["pi"],
        sigma2=arrays["sigma2"][0],
        W=arrays["W"],
        mu=arrays["mu"],
        Psi=arrays["Psi"],
        mu_psi_frozen=bool(arrays["mu_psi_frozen"][0]),
    )


def save_checkpoint(path, state: CheckpointState):
    states = np.asarray(state.states, dtype=np.uint8)
    if states.ndim != 3:
        raise CheckpointError("states must have shape (N, S, H)")
    n, s, h = states.shape
    arrays = _param_arrays(state.params)
    d = state.params.W.shape[0]
    out = [MAGIC, struct.pack("<I", VERSION), _TAGS[state.kind]]
    out.append(struct.pack("<IIIQQQ", h, d, s, n, state.iteration, state.seed))
    out.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    packed = np.packbits(states, axis=-1)
    out.append(struct.pack("<Q", packed.size))
    out.append(packed.tobytes())
    rows = state.trace.as_rows()
    out.append(struct.pack("<Q", len(rows)))
    for it, val in rows:
        out.append(struct.pack("<dd", float(it), float(val)))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    tag = rd.take(4)
    if tag not in _KINDS:
        raise CheckpointError(f"unknown model tag {tag!r}")
    kind = _KINDS[tag]
    h, d, s, n, iteration, seed = rd.unpack("<IIIQQQ")
    (n_arrays,) = rd.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode()
        (ndim,) = rd.unpack("<I")
        dims = rd.unpack(f"<{ndim}Q")
        count = int(np.prod(dims)) if ndim else 1
        arrays[name] = np.frombuffer(rd.take(8 * count), dtype="<f8").reshape(dims).copy()
    (payload,) = rd.unpack("<Q")
    per_row = (h + 7) // 8
    if payload != n * s * per_row:
        raise CheckpointError("K-set payload size mismatch")
    packed = np.frombuffer(rd.take(payload), dtype=np.uint8).reshape(n, s, per_row)
    states = np.unpackbits(packed, axis=-1)[:, :, :h]
    (trace_len,) = rd.unpack("<Q")
    trace = FreeEnergyTrace()
    for _ in range(trace_len):
        it, val = rd.unpack("<dd")
        trace.append(int(it), val)
    params = _params_from_arrays(kind, arrays)
    if params.W.shape != (d, h):
        raise CheckpointError("header dimensions disagree with stored arrays")
    return CheckpointState(params=params, states=states, iteration=iteration, seed=seed, trace=trace)
