"""Differentiable localization operators over probability maps.

Training-time losses come in three families: the error of the map's
expectation (soft-argmax), the exact discrete expected error (a weighted sum
of per-point distances), and a sampled expected error driven by the
Gumbel-softmax relaxation.  Two regularizers shape the map itself, matching a
target variance or pulling the map toward a discrete gaussian around its own
mean.  At test time everything collapses to the plain expectation: no
randomness, no temperature.

Relaxed sampling treats the per-component basis samples as constants; the
gradient flows through the relaxed component weights only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mixture import (
    WEIGHT_FLOOR,
    MixtureSpec,
    NoiseDraw,
    NoiseSource,
    ProbabilityMap,
    basis_sample_all,
    draw_noise,
)

__all__ = [
    "DISTANCES",
    "ANNEALS",
    "LOSS_KINDS",
    "SamplingConfig",
    "LossKind",
    "soft_argmax",
    "error_of_expectation_loss",
    "discrete_expected_error_loss",
    "gumbel_softmax",
    "gumbel_softmax_values",
    "sample_differentiable",
    "sampled_expected_error_loss",
    "anneal_tau",
    "variance_regularizer",
    "js_regularizer",
    "js_divergence_values",
    "gaussian_target_weights",
    "inference_localize",
]

DISTANCES = ("l1", "l2-squared")
ANNEALS = ("exponential", "linear")
LOSS_KINDS = (
    "error-of-expectation",
    "discrete-expected-error",
    "sampled-expected-error",
    "variance-regularizer",
    "js-regularizer",
)


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for the sampled loss: draw count, temperature schedule, distance."""

    num_samples: int = 5
    tau_start: float = 1.0
    tau_end: float = 0.1
    anneal: str = "exponential"
    distance: str = "l1"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        if not (0.0 < self.tau_end <= self.tau_start):
            raise ValueError("need tau_start >= tau_end > 0")
        if self.anneal not in ANNEALS:
            raise ValueError(f"unknown anneal schedule: {self.anneal!r}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance: {self.distance!r}")


@dataclass(frozen=True)
class LossKind:
    """One loss family plus the auxiliary parameter it needs, if any."""

    tag: str
    sigma_t_sq: float | None = None

    def __post_init__(self):
        if self.tag not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind: {self.tag!r}")
        regularizer = self.tag in ("variance-regularizer", "js-regularizer")
        if regularizer and (self.sigma_t_sq is None or not self.sigma_t_sq > 0):
            raise ValueError(f"{self.tag} needs sigma_t_sq > 0")


def _check_distance(distance: str) -> None:
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance: {distance!r}")


def _distance_loss(pred: Tensor, target: np.ndarray, distance: str) -> Tensor:
    diff = ad.subtract(pred, Tensor(target))
    if distance == "l1":
        return ad.sum_over_axis(ad.absolute_value(diff))
    return ad.sum_over_axis(ad.square(diff))


def _target_point(pmap: ProbabilityMap, y_t) -> np.ndarray:
    y = np.asarray(y_t, dtype=np.float64).reshape(-1)
    if y.shape != (pmap.ndim,):
        raise ValueError(f"target must have {pmap.ndim} coordinates, got {y.shape}")
    return y


# ---------------------------------------------------------------------------
# Expectation losses


def soft_argmax(pmap: ProbabilityMap) -> Tensor:
    """Expectation of the map: weights @ positions, shape (ndim,)."""
    return ad.matrix_multiply(pmap.weights, Tensor(pmap.support.positions))


def error_of_expectation_loss(pmap: ProbabilityMap, y_t, distance: str = "l1") -> Tensor:
    """d(y_t, E[y]) as a scalar tensor."""
    _check_distance(distance)
    return _distance_loss(soft_argmax(pmap), _target_point(pmap, y_t), distance)


def discrete_expected_error_loss(pmap: ProbabilityMap, y_t, distance: str = "l1") -> Tensor:
    """sum_i w_i d(y_t, y_i): the exact expected error over support points.

    The gradient is the pathwise one of the weighted sum; per-point distances
    are constants.
    """
    _check_distance(distance)
    y = _target_point(pmap, y_t)
    diff = pmap.support.positions - y
    if distance == "l1":
        per_point = np.abs(diff).sum(axis=1)
    else:
        per_point = (diff * diff).sum(axis=1)
    return ad.matrix_multiply(pmap.weights, Tensor(per_point))


# ---------------------------------------------------------------------------
# Relaxed sampling


def _floored_log_tensor(t: Tensor) -> Tensor:
    # max(t, floor) written with registered ops: relu(t - floor) + floor.
    floor = Tensor(WEIGHT_FLOOR)
    return ad.logarithm(ad.add(ad.relu(ad.subtract(t, floor)), floor))


def gumbel_softmax(pmap: ProbabilityMap, noise: NoiseDraw, tau: float) -> Tensor:
    """Relaxed one-hot over components: softmax((log w + g) / tau)."""
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    if noise.n != pmap.n:
        raise ValueError("noise draw does not match the map's support")
    scores = ad.add(_floored_log_tensor(pmap.weights), Tensor(noise.gumbels))
    return ad.softmax_over_axis(ad.divide(scores, Tensor(float(tau))), axis=-1)


def gumbel_softmax_values(weights: np.ndarray, gumbels: np.ndarray, tau: float) -> np.ndarray:
    """Plain-array twin of gumbel_softmax; supports row batches.

    Mirrors the tensor formula exactly (same floor, same stable softmax) so
    the two agree bitwise on shared inputs.
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    floored = np.maximum(weights - WEIGHT_FLOOR, 0.0) + WEIGHT_FLOOR
    scores = (np.log(floored) + gumbels) / float(tau)
    return ad.softmax_values(scores, axis=-1)


def sample_differentiable(
    pmap: ProbabilityMap, spec: MixtureSpec, noise: NoiseDraw, tau: float
) -> Tensor:
    """One relaxed mixture sample: sum_i pi_hat_i * y_hat_i, shape (ndim,).

    y_hat_i are per-component inverse-cdf samples, held constant for the
    gradient; differentiability comes entirely from the relaxed weights.
    """
    if noise.ndim != pmap.ndim:
        raise ValueError("noise draw does not match the map's dimensionality")
    relaxed = gumbel_softmax(pmap, noise, tau)
    samples = basis_sample_all(spec, pmap.support, noise.basis_uniforms)
    return ad.matrix_multiply(relaxed, Tensor(samples))


def sampled_expected_error_loss(
    pmap: ProbabilityMap,
    spec: MixtureSpec,
    y_t,
    config: SamplingConfig,
    tau: float,
    source: NoiseSource,
) -> Tensor:
    """Mean distance between y_t and num_samples relaxed samples.

    Each draw consumes fresh, independent noise from the source.
    """
    y = _target_point(pmap, y_t)
    total = None
    for _ in range(config.num_samples):
        noise = draw_noise(source, pmap.n, pmap.ndim)
        sample = sample_differentiable(pmap, spec, noise, tau)
        term = _distance_loss(sample, y, config.distance)
        total = term if total is None else ad.add(total, term)
    return ad.multiply(total, Tensor(1.0 / config.num_samples))


def anneal_tau(config: SamplingConfig, step: int, total_steps: int) -> float:
    """Temperature at `step` of `total_steps`, from tau_start down to tau_end."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps
    if config.anneal == "exponential":
        return float(config.tau_start * (config.tau_end / config.tau_start) ** frac)
    return float(config.tau_start + (config.tau_end - config.tau_start) * frac)


# ---------------------------------------------------------------------------
# Map-shaping regularizers


def variance_regularizer(pmap: ProbabilityMap, sigma_t_sq: float) -> Tensor:
    """(Var(pi) - sigma_t^2)^2 where Var sums the per-axis discrete variances."""
    if not sigma_t_sq > 0:
        raise ValueError("sigma_t_sq must be positive")
    pos = pmap.support.positions
    mean = ad.matrix_multiply(pmap.weights, Tensor(pos))
    second = ad.matrix_multiply(pmap.weights, Tensor(pos * pos))
    per_axis = ad.subtract(second, ad.square(mean))
    total = ad.sum_over_axis(per_axis)
    return ad.square(ad.subtract(total, Tensor(float(sigma_t_sq))))


def gaussian_target_weights(support, center: np.ndarray, sigma_t_sq: float) -> np.ndarray:
    """Discrete gaussian over the support points, renormalized to sum to 1."""
    diff = support.positions - np.asarray(center, dtype=np.float64)
    sq = (diff * diff).sum(axis=1)
    q = np.exp(-0.5 * sq / float(sigma_t_sq))
    return q / q.sum()


def js_divergence_values(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence (natural log) with 1e-12 floors inside logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    log_m = np.log(np.maximum(m, WEIGHT_FLOOR))

    def kl(a):
        return float(np.sum(a * (np.log(np.maximum(a, WEIGHT_FLOOR)) - log_m)))

    return 0.5 * (kl(p) + kl(q))


def js_regularizer(pmap: ProbabilityMap, sigma_t_sq: float, center=None) -> Tensor:
    """Jensen-Shannon divergence between the map and a discrete gaussian
    centered on the map's own expectation.

    The center is detached: the gradient shapes the map toward the target, it
    does not move the target.  Pass `center` to pin the target somewhere
    other than the current expectation.
    """
    if not sigma_t_sq > 0:
        raise ValueError("sigma_t_sq must be positive")
    if center is None:
        center = pmap.weight_values @ pmap.support.positions
    q = gaussian_target_weights(pmap.support, center, sigma_t_sq)

    w = pmap.weights
    m = ad.multiply(ad.add(w, Tensor(q)), Tensor(0.5))
    log_m = _floored_log_tensor(m)
    kl_p = ad.sum_over_axis(ad.multiply(w, ad.subtract(_floored_log_tensor(w), log_m)))
    log_q = np.log(np.maximum(q, WEIGHT_FLOOR))
    kl_q = ad.sum_over_axis(ad.multiply(Tensor(q), ad.subtract(Tensor(log_q), log_m)))
    return ad.multiply(ad.add(kl_p, kl_q), Tensor(0.5))


# ---------------------------------------------------------------------------
# Inference


def inference_localize(pmap: ProbabilityMap) -> np.ndarray:
    """Test-time prediction: the map's expectation, computed without tensors,
    tapes, or randomness.  Matches soft_argmax values bitwise."""
    return pmap.weight_values @ pmap.support.positions
