"""Bars data: ground-truth dictionaries, sampled verification datasets and
parameter-recovery scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import normalize_kind
from .models.bsc import BscParams, sample as bsc_sample
from .models.noisyor import NoisyOrParams, sample as nor_sample
from .models.sssc import SsscParams, sample as sssc_sample


@dataclass
class BarsSpec:
    """Ground truth on an R x R pixel grid: R horizontal plus R vertical bars.

    Binary-observable (noisy-OR) bars default to amplitude 0.8 on a 0.1
    background; continuous models use +-5 bars on a zero background.
    """

    r: int
    kind: str
    bar_amplitude: float | None = None
    background: float | None = None
    pi_gen: float | None = None  # default 2 / H_gen
    sigma2_gen: float = 1.0
    random_signs: bool = True  # BSC/SSSC: each bar uniformly +5 or -5

    def __post_init__(self):
        if self.r < 2:
            raise ValueError("bars grid needs r >= 2")
        self.kind = normalize_kind(self.kind)
        if self.bar_amplitude is None:
            self.bar_amplitude = 0.8 if self.kind == "nor" else 5.0
        if self.background is None:
            self.background = 0.1 if self.kind == "nor" else 0.0
        if self.bar_amplitude == self.background:
            raise ValueError("bars must differ from the background")
        if self.pi_gen is None:
            self.pi_gen = 2.0 / self.h_gen

    @property
    def d(self) -> int:
        return self.r * self.r

    @property
    def h_gen(self) -> int:
        return 2 * self.r


def bars_dictionary(spec: BarsSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """(D, 2R) dictionary: columns 1..R horizontal bars, R+1..2R vertical."""
    r = spec.r
    W = np.full((r, r, spec.h_gen), spec.background, dtype=np.float64)
    for i in range(r):
        W[i, :, i] = spec.bar_amplitude
        W[:, i, r + i] = spec.bar_amplitude
    W = W.reshape(spec.d, spec.h_gen)
    if spec.kind != "nor" and spec.random_signs:
        if rng is None:
            rng = np.random.default_rng(0)
        signs = np.where(rng.random(spec.h_gen) < 0.5, -1.0, 1.0)
        W = W * signs
    return W


def ground_truth_params(spec: BarsSpec, rng: np.random.Generator | None = None):
    W = bars_dictionary(spec, rng)
    h = spec.h_gen
    if spec.kind == "nor":
        return NoisyOrParams(pi=np.full(h, spec.pi_gen), W=W)
    if spec.kind == "bsc":
        return BscParams(pi=spec.pi_gen, sigma2=spec.sigma2_gen, W=W)
    return SsscParams(
        pi=np.full(h, spec.pi_gen), sigma2=spec.sigma2_gen, W=W,
        mu=np.zeros(h), Psi=np.eye(h),
    )


def generate_bars_dataset(spec: BarsSpec, n: int, rng: np.random.Generator):
    """Sample a verification dataset; returns (DataSet, ground-truth params)."""
    truth = ground_truth_params(spec, rng)
    if spec.kind == "nor":
        data, _ = nor_sample(truth, n, rng)
    elif spec.kind == "bsc":
        data, _ = bsc_sample(truth, n, rng)
    else:
        data, _ = sssc_sample(truth, n, rng)
    return data, truth


@dataclass
class RecoveryReport:
    """Injective match of ground-truth fields onto learned fields."""

    matching: list[tuple[int, int]]
    correlations: np.ndarray
    prior_errors: np.ndarray

    def __post_init__(self):
        self.correlations = np.asarray(self.correlations, dtype=np.float64)
        self.prior_errors = np.asarray(self.prior_errors, dtype=np.float64)
        learned = [j for _, j in self.matching]
        if len(set(learned)) != len(learned):
            raise ValueError("matching must be injective")

    @property
    def min_correlation(self) -> float:
        return float(self.correlations.min()) if self.correlations.size else 0.0

    def to_csv(self) -> str:
        lines = ["truth_field,learned_field,correlation,prior_abs_error"]
        for (ti, lj), c, e in zip(self.matching, self.correlations, self.prior_errors):
            lines.append(f"{ti},{lj},{c!r},{e!r}")
        return "\n".join(lines) + "\n"


def _normalized_columns(W: np.ndarray) -> np.ndarray:
    X = W - W.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    return X / norms


def score_recovery(learned, truth) -> RecoveryReport:
    """Greedy maximum-correlation matching of ground-truth dictionary columns
    to learned columns, on mean-free normalized columns with sign correction.
    Prior errors compare the matched pi entries (the shared pi for BSC)."""
    Wl, Wt = learned.W, truth.W
    if Wl.shape[0] != Wt.shape[0]:
        raise ValueError("dictionaries live in different data spaces")
    if Wl.shape[1] < Wt.shape[1]:
        raise ValueError("learned model has fewer fields than the ground truth")
    corr = np.abs(_normalized_columns(Wt).T @ _normalized_columns(Wl))
    n_truth = Wt.shape[1]
    matching, cors = [], []
    work = corr.copy()
    for _ in range(n_truth):
        ti, lj = np.unravel_index(np.argmax(work), work.shape)
        matching.append((int(ti), int(lj)))
        cors.append(float(corr[ti, lj]))
        work[ti, :] = -1.0
        work[:, lj] = -1.0
    matching_sorted = sorted(zip(matching, cors))
    matching = [m for m, _ in matching_sorted]
    cors = [c for _, c in matching_sorted]

    def pi_of(params, j):
        pi = params.pi
        return float(pi) if np.ndim(pi) == 0 else float(pi[j])

    errors = [abs(pi_of(learned, lj) - pi_of(truth, ti)) for ti, lj in matching]
    return RecoveryReport(matching=matching, correlations=np.array(cors), prior_errors=np.array(errors))
