"""Uncertainty scores over perturbed predictions of a single sample.

A sample is scored by forwarding P perturbed copies through the model and
reducing the resulting P x C logit matrix: the variance-style score is the
Bregman information (mean log-sum-exp of the rows minus log-sum-exp of the
mean row), the confidence-style scores (least confidence, margin, ratio,
entropy) act on row-wise softmax probabilities. Reductions over the P axis
use exactly rounded summation, so all scores are invariant to the order of
the perturbed copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ParameterVector, forward_logits

METRICS = ("bi", "lc", "ms", "rc", "en")

PERTURBATION_KINDS = ("gaussian", "mask")

# Negative values above this are floating-point noise on a quantity that is
# nonnegative by Jensen's inequality; they are clamped to zero.
_BI_CLAMP = -1e-12


def stable_lse(x) -> float:
    """log(sum(exp(x))) computed as max(x) + log(sum(exp(x - max(x))))."""
    a = np.asarray(x, dtype=np.float64)
    if a.size == 0:
        raise ValueError("stable_lse of an empty array")
    if not np.all(np.isfinite(a)):
        raise ValueError("stable_lse requires finite inputs")
    m = float(a.max())
    return m + math.log(math.fsum(np.exp(a - m)))


def _as_logit_set(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 2:
        raise ValueError(f"logit set must be (P >= 1, C >= 2), got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logit set entries must be finite")
    return z


def _as_probability_set(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 2:
        raise ValueError(f"probability set must be (P >= 1, C >= 2), got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("each probability row must sum to 1 within 1e-9")
    return p


def bregman_information(logits) -> float:
    """Variance of the predictions in logit space.

    mean_i LSE(z_i) - LSE(mean_i z_i) over the P rows. Zero exactly when
    all rows coincide (Jensen equality); tiny negative rounding residue is
    clamped to zero.
    """
    z = _as_logit_set(logits)
    if np.all(z == z[0]):
        return 0.0
    p = z.shape[0]
    mean_lse = math.fsum(stable_lse(row) for row in z) / p
    mean_row = np.fromiter(
        (math.fsum(z[:, j]) / p for j in range(z.shape[1])), dtype=np.float64, count=z.shape[1]
    )
    bi = mean_lse - stable_lse(mean_row)
    if _BI_CLAMP <= bi < 0.0:
        return 0.0
    return bi


def _top_two(row: np.ndarray) -> tuple[float, float]:
    top2 = np.partition(row, -2)[-2:]
    return float(top2[1]), float(top2[0])


def least_confidence(probs) -> float:
    """1 - mean top-class probability over the P rows."""
    p = _as_probability_set(probs)
    return 1.0 - math.fsum(float(row.max()) for row in p) / p.shape[0]


def margin_sampling(probs) -> float:
    """1 - mean margin between the two most probable classes."""
    p = _as_probability_set(probs)
    margins = []
    for row in p:
        first, second = _top_two(row)
        margins.append(first - second)
    return 1.0 - math.fsum(margins) / p.shape[0]


def ratio_confidence(probs) -> float:
    """Mean ratio of the runner-up to the top class probability."""
    p = _as_probability_set(probs)
    total = []
    for row in p:
        first, second = _top_two(row)
        if first == 0.0:
            raise ValueError("ratio_confidence requires a positive top probability")
        total.append(second / first)
    return math.fsum(total) / p.shape[0]


def entropy_score(probs) -> float:
    """Mean Shannon entropy of the P rows, with 0 * log 0 = 0."""
    p = _as_probability_set(probs)
    rows = []
    for row in p:
        nz = row[row > 0.0]
        rows.append(-math.fsum(nz * np.log(nz)))
    return math.fsum(rows) / p.shape[0]


_SCORERS = {
    "lc": least_confidence,
    "ms": margin_sampling,
    "rc": ratio_confidence,
    "en": entropy_score,
}


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PerturbationSpec:
    """How to generate the P perturbed copies of an input.

    ``gaussian`` adds N(0, sigma^2) noise per dimension; ``mask`` zeroes a
    fraction of coordinates chosen independently per copy. The caller owns
    the generator, so determinism across calls is the caller's contract.
    """

    count: int
    kind: str = "gaussian"
    sigma: float = 0.1
    mask_fraction: float = 0.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("perturbation count must be >= 1")
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind: {self.kind!r}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("sigma must be positive for gaussian perturbations")
        if self.kind == "mask" and not (0.0 <= self.mask_fraction < 1.0):
            raise ValueError("mask_fraction must lie in [0, 1)")


def perturb_features(x, spec: PerturbationSpec) -> list[np.ndarray]:
    """Return ``spec.count`` perturbed copies of ``x``."""
    base = np.asarray(x, dtype=np.float64)
    if spec.kind == "gaussian":
        noise = spec.rng.normal(0.0, spec.sigma, size=(spec.count, base.size))
        return [base + noise[i] for i in range(spec.count)]
    k = int(round(spec.mask_fraction * base.size))
    copies = []
    for _ in range(spec.count):
        copy = base.copy()
        if k > 0:
            copy[spec.rng.choice(base.size, size=k, replace=False)] = 0.0
        copies.append(copy)
    return copies


def score_sample(
    params: ParameterVector,
    config: ModelConfig,
    features,
    spec: PerturbationSpec,
    metric: str,
) -> float:
    """Uncertainty of one unlabeled sample under the current model."""
    if metric not in METRICS:
        raise ValueError(f"unknown uncertainty metric: {metric!r}")
    copies = perturb_features(features, spec)
    logits = np.stack([forward_logits(params, config, c) for c in copies])
    if metric == "bi":
        return bregman_information(logits)
    return _SCORERS[metric](softmax_rows(logits))
