"""Diagnostic suites: gradient checks, sampler distribution checks, and
estimator variance comparison.

Each suite returns structured rows so callers (tests, the command line) can
render or assert on them; nothing here prints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..mixture import (
    BASES,
    MixtureSpec,
    NoiseSource,
    ProbabilityMap,
    Support,
    basis_sample_all,
    draw_noise,
    draw_noise_batch,
    ks_critical_value,
    ks_statistic,
    mixture_cdf,
    mixture_moments,
    reference_sample_batch,
)
from ..operators import (
    LOSS_KINDS,
    discrete_expected_error_loss,
    error_of_expectation_loss,
    gumbel_softmax_values,
    js_regularizer,
    sample_differentiable,
    variance_regularizer,
)

__all__ = [
    "GradCheckRow",
    "GradCheckReport",
    "gradcheck_suite",
    "ReferenceRow",
    "RelaxedRow",
    "DistCheckReport",
    "distcheck_suite",
    "VarianceCompareRow",
    "VarianceCompareReport",
    "variance_compare",
]


# ---------------------------------------------------------------------------
# Gradient checks


@dataclass(frozen=True)
class GradCheckRow:
    loss: str
    basis: str
    ndim: int
    seed: int
    max_rel_error: float
    passed: bool


@dataclass(frozen=True)
class GradCheckReport:
    rows: tuple[GradCheckRow, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def worst(self) -> float:
        return max(r.max_rel_error for r in self.rows)


def _distance_scalar(pred: Tensor, target: np.ndarray, distance: str) -> Tensor:
    diff = ad.subtract(pred, Tensor(target))
    if distance == "l1":
        return ad.sum_over_axis(ad.absolute_value(diff))
    return ad.sum_over_axis(ad.square(diff))


def gradcheck_suite(
    seeds: int = 20,
    step: float = 1e-5,
    tol: float = 1e-4,
    num_samples: int = 3,
    tau: float = 0.7,
    sigma_t_sq: float = 4.0,
    extra_losses: Mapping[str, Callable[[ProbabilityMap, np.ndarray], Tensor]] | None = None,
) -> GradCheckReport:
    """Check analytic gradients of every loss family against central finite
    differences, across bases, 1-D and 2-D supports, and `seeds` randomized
    logits per combination.

    Row count is (|losses| + |extra_losses|) * |bases| * 2 * seeds.  The
    sampled loss uses noise frozen per row; the distribution regularizer's
    center is pinned at the unperturbed weights, matching the gradient it
    actually computes.
    """
    supports = {1: Support.regular_grid(8), 2: Support.regular_grid((4, 4))}
    extras = dict(extra_losses or {})
    rows: list[GradCheckRow] = []
    for ndim, support in supports.items():
        span = support.positions.max() - 1.0
        for basis_idx, basis in enumerate(BASES):
            spec = MixtureSpec(basis)
            for loss_idx, loss_name in enumerate(LOSS_KINDS + tuple(extras)):
                for seed in range(seeds):
                    rng = np.random.default_rng([2311, ndim, basis_idx, loss_idx, seed])
                    x0 = rng.uniform(-2.0, 2.0, support.n)
                    y_t = rng.uniform(0.5, span, size=ndim)
                    distance = "l1" if seed % 2 == 0 else "l2-squared"
                    f = _loss_closure(
                        loss_name, support, spec, y_t, distance, num_samples, tau, sigma_t_sq, x0, extras
                    )
                    result = ad.grad_check(f, x0, step=step, tol=tol)
                    rows.append(
                        GradCheckRow(loss_name, basis, ndim, seed, result.max_rel_error, result.passed)
                    )
    return GradCheckReport(tuple(rows), tol)


def _loss_closure(loss_name, support, spec, y_t, distance, num_samples, tau, sigma_t_sq, x0, extras):
    if loss_name == "sampled-expected-error":
        src = NoiseSource([8741, support.ndim, BASES.index(spec.basis)])
        noises = [draw_noise(src, support.n, support.ndim) for _ in range(num_samples)]
    elif loss_name == "js-regularizer":
        # Pin the target center at the unperturbed map so the finite
        # difference sees the same detached center the tape does.
        w0 = ad.softmax_values(x0, axis=-1)
        center0 = w0 @ support.positions
    else:
        noises = None

    def f(x: Tensor) -> Tensor:
        weights = ad.softmax_over_axis(x, axis=-1)
        pmap = ProbabilityMap(support, weights)
        if loss_name == "error-of-expectation":
            return error_of_expectation_loss(pmap, y_t, distance)
        if loss_name == "discrete-expected-error":
            return discrete_expected_error_loss(pmap, y_t, distance)
        if loss_name == "sampled-expected-error":
            total = None
            for noise in noises:
                sample = sample_differentiable(pmap, spec, noise, tau)
                term = _distance_scalar(sample, y_t, distance)
                total = term if total is None else ad.add(total, term)
            return ad.multiply(total, Tensor(1.0 / len(noises)))
        if loss_name == "variance-regularizer":
            return variance_regularizer(pmap, sigma_t_sq)
        if loss_name == "js-regularizer":
            return js_regularizer(pmap, sigma_t_sq, center=center0)
        return extras[loss_name](pmap, y_t)

    return f


# ---------------------------------------------------------------------------
# Sampler distribution checks


@dataclass(frozen=True)
class ReferenceRow:
    map_index: int
    basis: str
    ks: float
    ks_crit: float
    ks_passed: bool
    mean_gap: float
    var_gap: float


@dataclass(frozen=True)
class RelaxedRow:
    map_index: int
    basis: str
    freq_gap: float
    freq_passed: bool
    ks_sharp: float
    ks_smooth: float
    ordered: bool


@dataclass(frozen=True)
class DistCheckReport:
    reference: tuple[ReferenceRow, ...]
    relaxed: tuple[RelaxedRow, ...]
    draws: int
    alpha: float

    @property
    def passed(self) -> bool:
        return (
            all(r.ks_passed for r in self.reference)
            and all(r.freq_passed for r in self.relaxed)
            and all(r.ordered for r in self.relaxed)
        )


def distcheck_suite(
    num_maps: int = 20,
    draws: int = 100_000,
    n: int = 16,
    seed: int = 20260814,
    tau_sharp: float = 0.05,
    tau_smooth: float = 1.0,
    alpha: float = 0.01,
    freq_tol: float = 0.01,
) -> DistCheckReport:
    """Compare samplers against closed-form facts on random 1-D maps.

    Per map and basis: a KS test of the reference sampler against the exact
    mixture cdf (pass under the alpha critical value), exact-vs-sample moment
    gaps, relaxed-argmax component frequencies against the weights, and the
    KS statistics of the relaxed sampler at a sharp and a smooth temperature
    (sharp must fit strictly better, on shared noise).
    """
    support = Support.regular_grid(n)
    crit = ks_critical_value(draws, alpha)
    reference_rows: list[ReferenceRow] = []
    relaxed_rows: list[RelaxedRow] = []
    for m in range(num_maps):
        rng = np.random.default_rng([seed, m])
        weights = ad.softmax_values(rng.normal(0.0, 1.5, n), axis=-1)
        pmap = ProbabilityMap(support, Tensor(weights))
        for basis_idx, basis in enumerate(BASES):
            spec = MixtureSpec(basis)

            source = NoiseSource([seed, m, basis_idx, 1])
            samples = reference_sample_batch(pmap, spec, draws, source)[:, 0]
            ks = ks_statistic(samples, lambda y: mixture_cdf(pmap, spec, y))
            exact_mean, exact_var = mixture_moments(pmap, spec)
            mean_gap = abs(float(samples.mean()) - float(exact_mean[0]))
            var_gap = abs(float(samples.var()) - float(exact_var[0]))
            reference_rows.append(
                ReferenceRow(m, basis, ks, crit, ks <= crit, mean_gap, var_gap)
            )

            source = NoiseSource([seed, m, basis_idx, 2])
            gumbels, uniforms = draw_noise_batch(source, draws, n, 1)
            winners = np.argmax(gumbels + np.log(weights), axis=1)
            freq = np.bincount(winners, minlength=n) / draws
            freq_gap = float(np.abs(freq - weights).max())
            y_hat = basis_sample_all(spec, support, uniforms)[..., 0]
            ks_by_tau = {}
            for tau in (tau_sharp, tau_smooth):
                relaxed = gumbel_softmax_values(weights, gumbels, tau)
                y_relaxed = (relaxed * y_hat).sum(axis=1)
                ks_by_tau[tau] = ks_statistic(y_relaxed, lambda y: mixture_cdf(pmap, spec, y))
            relaxed_rows.append(
                RelaxedRow(
                    m,
                    basis,
                    freq_gap,
                    freq_gap <= freq_tol,
                    ks_by_tau[tau_sharp],
                    ks_by_tau[tau_smooth],
                    ks_by_tau[tau_sharp] < ks_by_tau[tau_smooth],
                )
            )
    return DistCheckReport(tuple(reference_rows), tuple(relaxed_rows), draws, alpha)


# ---------------------------------------------------------------------------
# Estimator variance comparison


@dataclass(frozen=True)
class VarianceCompareRow:
    seed: int
    trace_score: float
    trace_reparam: float
    coord_greater_frac: float
    trace_ordered: bool


@dataclass(frozen=True)
class VarianceCompareReport:
    rows: tuple[VarianceCompareRow, ...]
    draws: int
    tau: float

    @property
    def passed(self) -> bool:
        return all(r.trace_ordered for r in self.rows)


def score_function_gradients(
    weights: np.ndarray, positions: np.ndarray, y_t: float, gumbels: np.ndarray
) -> np.ndarray:
    """Per-draw score-function gradient of E[|y - y_t|] w.r.t. the logits.

    Draw i ~ pi via the Gumbel-max rule, then d(y_t, y_i) * (e_i - pi).
    Diagnostic only; training never uses this estimator.
    """
    winners = np.argmax(gumbels + np.log(weights), axis=1)
    d = np.abs(positions[winners] - y_t)
    grads = -np.outer(d, weights)
    grads[np.arange(winners.size), winners] += d
    return grads


def reparam_gradients(
    weights: np.ndarray,
    positions: np.ndarray,
    y_t: float,
    gumbels: np.ndarray,
    y_hat: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Per-draw pathwise gradient of |relaxed sample - y_t| w.r.t. the logits.

    With z = (log pi + g) / tau, pi_hat = softmax(z) and Y = sum pi_hat*y_hat,
    dY/dz_k = pi_hat_k (y_hat_k - Y), and dz/dlogits folds in another softmax
    Jacobian and the 1/tau; the pi_k term cancels because sum_k dY/dz_k = 0.
    """
    relaxed = gumbel_softmax_values(weights, gumbels, tau)
    y_relaxed = (relaxed * y_hat).sum(axis=1)
    sign = np.sign(y_relaxed - y_t)
    b = relaxed * (y_hat - y_relaxed[:, None])
    return sign[:, None] * b / tau


def variance_compare(
    num_seeds: int = 10,
    draws: int = 10_000,
    n: int = 16,
    tau: float = 1.0,
    basis: str = "triangular",
) -> VarianceCompareReport:
    """Gradient variance of the score-function estimator vs the relaxed
    pathwise estimator, per logit coordinate and in trace, one draw per
    estimate."""
    support = Support.regular_grid(n)
    positions = support.positions[:, 0]
    spec = MixtureSpec(basis)
    rows: list[VarianceCompareRow] = []
    for s in range(num_seeds):
        rng = np.random.default_rng([4171, s])
        weights = ad.softmax_values(rng.normal(0.0, 1.5, n), axis=-1)
        y_t = float(rng.uniform(0.5, n - 1.5))

        sf_source = NoiseSource([4171, s, 1])
        g_sf, _ = draw_noise_batch(sf_source, draws, n, 1)
        grads_sf = score_function_gradients(weights, positions, y_t, g_sf)

        rp_source = NoiseSource([4171, s, 2])
        g_rp, u_rp = draw_noise_batch(rp_source, draws, n, 1)
        y_hat = basis_sample_all(spec, support, u_rp)[..., 0]
        grads_rp = reparam_gradients(weights, positions, y_t, g_rp, y_hat, tau)

        var_sf = grads_sf.var(axis=0)
        var_rp = grads_rp.var(axis=0)
        trace_sf = float(var_sf.sum())
        trace_rp = float(var_rp.sum())
        rows.append(
            VarianceCompareRow(
                seed=s,
                trace_score=trace_sf,
                trace_reparam=trace_rp,
                coord_greater_frac=float((var_sf > var_rp).mean()),
                trace_ordered=trace_sf > trace_rp,
            )
        )
    return VarianceCompareReport(tuple(rows), draws, tau)
