"""Monte Carlo and quadrature estimators: moments, entropy, Dirichlet forms,
tail probabilities, the Young function phi, Orlicz (Luxemburg) norms, and the
L1/L2 Talagrand-style bound.

Every estimator is a pure function of (inputs, seed).  Scalar results are
returned as :class:`EstimateWithCI`.  Standard errors come from vectorised
delete-one jackknives for smooth statistics and from batch-splitting for the
bisection-based norms; tail probabilities carry exact Clopper-Pearson
intervals.

Orlicz convention: ||h||_phi = inf{c > 0 : E phi(|h|/c) <= 1}.  (The <= 1
constraint is the standard Luxemburg form; reports flag this choice.)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from .functions import TestFunction
from .measures import ProductMeasure, sample

__all__ = [
    "MCParams",
    "EstimateWithCI",
    "MomentEstimates",
    "EntropyDomainError",
    "OrliczRangeError",
    "phi_eval",
    "PHI_LINEAR_SLOPE",
    "orlicz_norm",
    "grad_orlicz_sq",
    "gamma_orlicz_sq",
    "l1l2_bound",
    "estimate_moments",
    "estimate_entropy",
    "dirichlet_form",
    "tail_probability",
    "semigroup_representation",
    "derive_seed",
]

PHI_LINEAR_SLOPE = 1.0 / np.log(np.e + 1.0)


class EntropyDomainError(ValueError):
    """Entropy requested for a function with nonpositive sample values."""


class OrliczRangeError(RuntimeError):
    """The Orlicz bisection could not bracket the unit level."""


def derive_seed(seed: int, *labels) -> int:
    """Stable sub-seed derived from ``seed`` and string/int labels."""
    material = repr((int(seed),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2s(material, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class MCParams:
    """Shared Monte Carlo knobs: sample count, seed, CI level, bisection tol."""

    samples: int = 100_000
    seed: int = 0
    confidence: float = 0.99
    bisect_tol: float = 1e-4
    chunks: int = 10

    def z(self) -> float:
        return float(stats.norm.ppf(0.5 + self.confidence / 2.0))


@dataclass(frozen=True)
class EstimateWithCI:
    """Scalar estimate with a two-sided confidence interval."""

    value: float
    std_error: float
    ci_low: float
    ci_high: float
    confidence: float = 0.99
    count: int = 0
    seed: int = 0
    estimator_tag: str = ""
    note: str = ""

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        fuzz = 1e-12 * max(1.0, abs(self.value))
        if not (self.ci_low - fuzz <= self.value <= self.ci_high + fuzz):
            raise ValueError(
                f"CI [{self.ci_low}, {self.ci_high}] does not contain {self.value}"
            )

    @classmethod
    def exact(cls, value: float, count: int = 0, seed: int = 0, tag: str = "exact",
              confidence: float = 0.99) -> "EstimateWithCI":
        v = float(value)
        return cls(v, 0.0, v, v, confidence, count, seed, tag)

    @classmethod
    def from_value_se(cls, value: float, se: float, mc: "MCParams", count: int,
                      tag: str, note: str = "") -> "EstimateWithCI":
        z = mc.z()
        v, s = float(value), float(se)
        return cls(v, s, v - z * s, v + z * s, mc.confidence, count, mc.seed, tag, note)

    @classmethod
    def from_samples(cls, values: np.ndarray, mc: "MCParams", tag: str) -> "EstimateWithCI":
        values = np.asarray(values, dtype=float)
        n = values.size
        se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls.from_value_se(float(values.mean()), se, mc, n, tag)


@dataclass(frozen=True)
class MomentEstimates:
    mean: EstimateWithCI
    variance: EstimateWithCI


# -- Young function -----------------------------------------------------------


def phi_eval(x):
    """Young function: x^2/log(e+x) for x >= 1, linear x/log(e+1) on [0, 1).

    The linear completion below 1 is continuous at 1 and keeps phi convex
    and nondecreasing with phi(0) = 0.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("phi is defined on [0, inf)")
    lin = arr * PHI_LINEAR_SLOPE
    big = np.maximum(arr, 1.0)  # keep log argument away from the small branch
    quad = big * big / np.log(np.e + big)
    out = np.where(arr < 1.0, lin, quad)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


# -- Orlicz norms -------------------------------------------------------------


def _orlicz_bisect(values: np.ndarray, rel_tol: float) -> float:
    """Luxemburg norm of |values| under the empirical measure."""
    vmax = float(values.max())
    if vmax == 0.0:
        return 0.0

    def level(c):
        return float(np.mean(phi_eval(values / c)))

    hi = vmax  # E phi(|h|/vmax) <= phi(1) < 1, so hi is always admissible
    lo = hi
    for _ in range(200):
        lo /= 2.0
        if level(lo) > 1.0:
            break
    else:
        raise OrliczRangeError("could not bracket E phi(|h|/c) = 1 from below")
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if level(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _orlicz_with_se(values: np.ndarray, mc: MCParams, tag: str) -> EstimateWithCI:
    values = np.abs(np.asarray(values, dtype=float))
    if values.max() == 0.0:
        return EstimateWithCI.exact(0.0, count=values.size, seed=mc.seed, tag=tag,
                                    confidence=mc.confidence)
    value = _orlicz_bisect(values, mc.bisect_tol)
    k = max(2, min(mc.chunks, values.size))
    subs = [
        _orlicz_bisect(part, mc.bisect_tol)
        for part in np.array_split(values, k)
    ]
    se = float(np.std(subs, ddof=1) / np.sqrt(k))
    return EstimateWithCI.from_value_se(value, se, mc, values.size, tag)


def orlicz_norm(h, measure: ProductMeasure, mc: MCParams) -> EstimateWithCI:
    """Monte Carlo Luxemburg norm ||h||_phi under ``measure``.

    Bisection on c over the map c -> mean phi(|h|/c) computed with a single
    shared sample batch (common random numbers across c values).
    """
    fn = h.eval_batch if isinstance(h, TestFunction) else h
    X = sample(measure, mc.samples, mc.seed).points
    return _orlicz_with_se(fn(X), mc, "orlicz_norm")


def _columns_orlicz_sq(G: np.ndarray, mc: MCParams, tag: str) -> EstimateWithCI:
    """Sum of squared Luxemburg norms over the columns of |G|, chunked SE."""

    def total(block: np.ndarray) -> float:
        acc = 0.0
        for i in range(block.shape[1]):
            col = block[:, i]
            if col.max() == 0.0:
                continue
            acc += _orlicz_bisect(col, mc.bisect_tol) ** 2
        return acc

    value = total(G)
    k = max(2, min(mc.chunks, G.shape[0]))
    subs = [total(part) for part in np.array_split(G, k, axis=0)]
    se = float(np.std(subs, ddof=1) / np.sqrt(k))
    return EstimateWithCI.from_value_se(value, se, mc, G.shape[0], tag)


def grad_orlicz_sq(f: TestFunction, measure: ProductMeasure, mc: MCParams) -> EstimateWithCI:
    """sum_i ||d_i f||_phi^2 with one shared sample batch across coordinates."""
    X = sample(measure, mc.samples, mc.seed).points
    G = np.abs(f.grad_batch(X))
    return _columns_orlicz_sq(G, mc, "grad_orlicz_sq")


def gamma_orlicz_sq(f: TestFunction, measure: ProductMeasure, mc: MCParams) -> EstimateWithCI:
    """sum_i ||Gamma_i f||_phi^2 for the measure's directional calculus
    (sqrt(x_i) d_i on the exponential family, flat d_i otherwise)."""
    X = sample(measure, mc.samples, mc.seed).points
    G = np.abs(carre_du_champ(measure, f, X))
    return _columns_orlicz_sq(G, mc, "gamma_orlicz_sq")


def l1l2_bound(f: TestFunction, measure: ProductMeasure, mc: MCParams) -> EstimateWithCI:
    """sum_i ||d_i f||_2^2 / (1 + log(||d_i f||_2 / ||d_i f||_1)), constant C = 1.

    The ratio is oriented so the logarithm is nonnegative (L2 >= L1 under a
    probability measure); coordinates with vanishing L1 norm contribute 0.
    """
    X = sample(measure, mc.samples, mc.seed).points
    G = np.abs(f.grad_batch(X))

    def total(block: np.ndarray) -> float:
        acc = 0.0
        for i in range(block.shape[1]):
            col = block[:, i]
            n1 = float(col.mean())
            if n1 == 0.0:
                continue
            n2sq = float(np.mean(col * col))
            n2 = np.sqrt(n2sq)
            acc += n2sq / (1.0 + np.log(max(n2 / n1, 1.0)))
        return acc

    value = total(G)
    k = max(2, min(mc.chunks, G.shape[0]))
    subs = [total(part) for part in np.array_split(G, k, axis=0)]
    se = float(np.std(subs, ddof=1) / np.sqrt(k))
    return EstimateWithCI.from_value_se(
        value, se, mc, G.shape[0], "l1l2_bound", note="constant C=1 reported separately"
    )


# -- moments / entropy / energy ------------------------------------------------


def _jackknife_se(loo: np.ndarray) -> float:
    n = loo.size
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def estimate_moments(f, measure: ProductMeasure, mc: MCParams) -> MomentEstimates:
    """Plug-in mean and variance with a delete-one jackknife SE for the variance."""
    fn = f.eval_batch if isinstance(f, TestFunction) else f
    X = sample(measure, mc.samples, mc.seed).points
    vals = np.asarray(fn(X), dtype=float)
    n = vals.size
    mean = EstimateWithCI.from_samples(vals, mc, "mc_mean")

    s1 = vals.sum()
    s2 = (vals * vals).sum()
    var_hat = s2 / n - (s1 / n) ** 2
    loo = (s2 - vals * vals) / (n - 1) - ((s1 - vals) / (n - 1)) ** 2
    se = _jackknife_se(loo)
    variance = EstimateWithCI.from_value_se(var_hat, se, mc, n, "mc_variance_jackknife")
    return MomentEstimates(mean=mean, variance=variance)


def estimate_entropy(g, measure: ProductMeasure, mc: MCParams) -> EstimateWithCI:
    """Ent(g) = E[g log g] - E[g] log E[g] for positive g, jackknife SE."""
    fn = g.eval_batch if isinstance(g, TestFunction) else g
    X = sample(measure, mc.samples, mc.seed).points
    vals = np.asarray(fn(X), dtype=float)
    if np.any(vals <= 0.0):
        raise EntropyDomainError("entropy requires strictly positive sample values")
    return _entropy_from_values(vals, mc)


def _entropy_from_values(vals: np.ndarray, mc: MCParams) -> EstimateWithCI:
    n = vals.size
    glg = vals * np.log(vals)
    s_g = vals.sum()
    s_gl = glg.sum()
    m_g = s_g / n
    ent = s_gl / n - m_g * np.log(m_g)
    loo_g = (s_g - vals) / (n - 1)
    loo = (s_gl - glg) / (n - 1) - loo_g * np.log(loo_g)
    se = _jackknife_se(loo)
    return EstimateWithCI.from_value_se(ent, se, mc, n, "mc_entropy_jackknife")


def carre_du_champ(measure: ProductMeasure, f: TestFunction, X: np.ndarray) -> np.ndarray:
    """Directional derivatives Gamma_i f: flat d_i, or sqrt(x_i) d_i for the
    exponential family."""
    G = f.grad_batch(X)
    if measure.family_tag == "exponential":
        return np.sqrt(np.maximum(X, 0.0)) * G
    return G


def dirichlet_form(f: TestFunction, g: TestFunction, measure: ProductMeasure,
                   mc: MCParams) -> EstimateWithCI:
    """Energy E(f, g) = E[sum_i Gamma_i f Gamma_i g] under the measure's calculus."""
    X = sample(measure, mc.samples, mc.seed).points
    dots = np.sum(carre_du_champ(measure, f, X) * carre_du_champ(measure, g, X), axis=1)
    return EstimateWithCI.from_samples(dots, mc, "mc_dirichlet")


# -- tails ---------------------------------------------------------------------


def _clopper_pearson(k: int, n: int, confidence: float) -> tuple[float, float]:
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2.0, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return lo, hi


def tail_probability(f, measure: ProductMeasure, t: float, side: str,
                     mc: MCParams) -> EstimateWithCI:
    """mu(f - E f <= -t) or mu(f - E f >= t) with an exact Clopper-Pearson CI.

    The centering mean is estimated on an independent batch so the tail count
    is a clean binomial.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if side not in ("lower_centered", "upper_centered"):
        raise ValueError(f"unknown side {side!r}")
    fn = f.eval_batch if isinstance(f, TestFunction) else f
    mean_seed = derive_seed(mc.seed, "tail_mean")
    vals_mean = fn(sample(measure, mc.samples, mean_seed).points)
    m = float(np.mean(vals_mean))
    vals = fn(sample(measure, mc.samples, mc.seed).points)
    if side == "lower_centered":
        k = int(np.sum(vals - m <= -t))
    else:
        k = int(np.sum(vals - m >= t))
    n = vals.size
    p = k / n
    lo, hi = _clopper_pearson(k, n, mc.confidence)
    note = "zero observed hits" if k == 0 else ""
    se = float(np.sqrt(max(p * (1.0 - p), 0.0) / n))
    return EstimateWithCI(p, se, lo, hi, mc.confidence, n, mc.seed,
                          "clopper_pearson", note)


# -- semigroup representations ---------------------------------------------------


def semigroup_representation(kind: str, func: TestFunction, measure: ProductMeasure,
                             op, T: float | None = None, time_nodes: int = 48,
                             mc: MCParams | None = None) -> EstimateWithCI:
    """Dynamical representations along the semigroup.

    ``kind="variance"``: 2 * int_0^inf E|grad P_t f|^2 dt, evaluated with the
    substitution s = e^{-t} and Gauss-Legendre nodes, so the infinite horizon
    is covered exactly.  ``kind="entropy"``: the truncated upper estimate
    (1 - e^{-2 rho T})^{-1} int_0^T E[|grad P_t g|^2 / P_t g] dt with the
    default horizon T = 1/(2 rho); ``func`` must be positive.
    """
    from . import semigroup as sg  # local import: semigroup depends on this module

    mc = mc or MCParams()
    if kind == "variance":
        return _variance_representation(func, measure, op, time_nodes, mc, sg)
    if kind == "entropy":
        horizon = 1.0 / (2.0 * measure.rho) if T is None else float(T)
        return _entropy_representation(func, measure, op, horizon, time_nodes, mc, sg)
    raise ValueError(f"unknown representation kind {kind!r}")


def _variance_representation(f, measure, op, time_nodes, mc, sg):
    nodes, weights = np.polynomial.legendre.leggauss(time_nodes)
    s_nodes = 0.5 * (nodes + 1.0)
    s_weights = 0.5 * weights

    N = mc.samples
    if op.backend.startswith("mehler"):
        rng = np.random.default_rng(np.random.SeedSequence(derive_seed(mc.seed, "varrep")))
        X = rng.standard_normal((N, measure.dimension))
        Y1 = rng.standard_normal((N, measure.dimension))
        Y2 = rng.standard_normal((N, measure.dimension))
        per_sample = np.zeros(N)
        for s, w in zip(s_nodes, s_weights):
            sig = np.sqrt(1.0 - s * s)
            U1 = X * s + sig * Y1
            U2 = X * s + sig * Y2
            # |grad P_t f|^2 = e^{-2t} E[grad f(U1) . grad f(U2)]; after the
            # s = e^{-t} substitution the integrand carries a single factor s.
            per_sample += w * s * np.sum(f.grad_batch(U1) * f.grad_batch(U2), axis=1)
        vals = 2.0 * per_sample
        est = EstimateWithCI.from_samples(vals, mc, "variance_representation")
        return est

    # SDE backend: paired Euler-Maruyama paths from a common start, gradient
    # by the path-weight representation on each member of the pair.
    t_max = -np.log(s_nodes.min())
    starts = sample(measure, N, derive_seed(mc.seed, "varrep_starts")).points
    t_grid = -np.log(s_nodes)
    order = np.argsort(t_grid)
    grads = sg.feynman_kac_grad_pair(op, f, starts, t_grid[order],
                                     derive_seed(mc.seed, "varrep_paths"))
    per_sample = np.zeros(N)
    for idx, pos in enumerate(order):
        g1, g2 = grads[idx]
        per_sample += s_weights[pos] / s_nodes[pos] * np.sum(g1 * g2, axis=1)
    vals = 2.0 * per_sample
    return EstimateWithCI.from_samples(vals, mc, "variance_representation_sde")


def _entropy_representation(g, measure, op, T, time_nodes, mc, sg):
    if not op.backend.startswith("mehler"):
        raise ValueError("entropy representation implemented for Gaussian backends")
    nodes, weights = np.polynomial.legendre.leggauss(time_nodes)
    t_nodes = 0.5 * T * (nodes + 1.0)
    t_weights = 0.5 * T * weights

    N = mc.samples
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(mc.seed, "entrep")))
    X = rng.standard_normal((N, measure.dimension))
    per_sample = np.zeros(N)
    for t, w in zip(t_nodes, t_weights):
        vals = sg.mehler_value_batch(op, g, t, X)
        if np.any(vals <= 0.0):
            raise EntropyDomainError("P_t g must stay positive along the grid")
        grads = sg.mehler_grad_batch(op, g, t, X)
        per_sample += w * np.sum(grads * grads, axis=1) / vals
    factor = 1.0 / -np.expm1(-2.0 * measure.rho * T)
    vals = factor * per_sample
    return EstimateWithCI.from_samples(vals, mc, "entropy_representation")
