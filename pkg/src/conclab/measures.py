"""Product measures mu = mu_1 x ... x mu_n with densities exp(-V_i(x_i)) dx.

Each one-dimensional factor is described by its potential V_i together with a
curvature floor kappa_i (V_i'' >= -kappa_i everywhere).  The product carries
the functional-inequality constants rho (log-Sobolev / hypercontractivity)
and lam (spectral gap), which are inputs, never estimated here.

Samplers: exact for the Gaussian and exponential families, vectorised MALA
(Metropolis-adjusted Langevin) for general smooth potentials.
"""

from __future__ import annotations

import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FULL_LINE",
    "HALF_LINE",
    "Potential1D",
    "ProductMeasure",
    "SampleBatch",
    "MeasureConstructionError",
    "SamplerQualityError",
    "gaussian_potential",
    "double_well_potential",
    "exponential_potential",
    "make_gaussian",
    "make_general",
    "make_exponential",
    "make_double_well",
    "sample",
]

FULL_LINE = "full_line"
HALF_LINE = "half_line_nonneg"

_CURVATURE_FUZZ = 1e-9
_PROBE_POINTS = 10_000


class MeasureConstructionError(ValueError):
    """Raised when a potential or measure fails its construction checks."""


class SamplerQualityError(RuntimeError):
    """Raised when MCMC convergence diagnostics exceed their thresholds."""


@dataclass(frozen=True)
class Potential1D:
    """One-dimensional potential V with derivative oracles.

    All three callables must accept and return numpy arrays.  ``kappa_i`` is
    a uniform curvature floor: V'' >= -kappa_i on the support.  Potentials on
    the half line return +inf below zero so the density oracle stays total.
    """

    value: Callable[[np.ndarray], np.ndarray]
    first_derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]
    kappa_i: float
    support: str = FULL_LINE
    name: str = "potential"

    def __post_init__(self):
        if self.support not in (FULL_LINE, HALF_LINE):
            raise MeasureConstructionError(f"unknown support {self.support!r}")
        grid = self.probe_grid()
        vals = np.asarray(self.value(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise MeasureConstructionError(
                f"potential {self.name!r} is non-finite on the probe grid"
            )
        curv = np.asarray(self.second_derivative(grid), dtype=float)
        low = float(np.min(curv))
        if low < -self.kappa_i - _CURVATURE_FUZZ:
            raise MeasureConstructionError(
                f"potential {self.name!r} violates V'' >= -kappa_i: "
                f"min V'' = {low:.6g} < {-self.kappa_i:.6g}"
            )

    def probe_grid(self, points: int = _PROBE_POINTS) -> np.ndarray:
        if self.support == HALF_LINE:
            return np.linspace(1e-8, 20.0, points)
        return np.linspace(-10.0, 10.0, points)


_SERIAL = itertools.count(1)


@dataclass(frozen=True)
class ProductMeasure:
    """Product of independent 1D factors exp(-V_i) dx on R^n (or R_+^n)."""

    dimension: int
    potentials: tuple[Potential1D, ...]
    kappa: float
    rho: float
    lam: float
    family_tag: str  # gaussian | general_smooth | exponential
    serial: int = field(default_factory=lambda: next(_SERIAL))

    def __post_init__(self):
        if self.dimension < 1:
            raise MeasureConstructionError("dimension must be >= 1")
        if len(self.potentials) != self.dimension:
            raise MeasureConstructionError("need one potential per coordinate")
        if self.rho <= 0 or self.lam <= 0:
            raise MeasureConstructionError("rho and lam must be positive")
        if self.rho > self.lam + 1e-12:
            raise MeasureConstructionError(
                f"rho = {self.rho} exceeds spectral gap lam = {self.lam}"
            )
        want = max(p.kappa_i for p in self.potentials)
        if self.family_tag == "gaussian":
            if not (self.kappa == -1.0 and self.rho == 1.0 and self.lam == 1.0):
                raise MeasureConstructionError(
                    "gaussian family requires kappa=-1, rho=lam=1"
                )
        elif self.family_tag == "general_smooth" and abs(self.kappa - want) > 1e-12:
            raise MeasureConstructionError("kappa must be max_i kappa_i")

    # -- oracles -----------------------------------------------------------

    @property
    def half_line(self) -> bool:
        return self.potentials[0].support == HALF_LINE

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Unnormalised log density -sum_i V_i(x_i) for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for i, pot in enumerate(self.potentials):
            col = x[:, i]
            if pot.support == HALF_LINE:
                vals = np.where(col < 0.0, np.inf, pot.value(np.maximum(col, 0.0)))
            else:
                vals = pot.value(col)
            out -= vals
        return out

    def potential_grad(self, x: np.ndarray) -> np.ndarray:
        """grad V, one column per coordinate (rows = points)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for i, pot in enumerate(self.potentials):
            out[:, i] = pot.first_derivative(x[:, i])
        return out

    def potential_curvature(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for i, pot in enumerate(self.potentials):
            out[:, i] = pot.second_derivative(x[:, i])
        return out

    def in_support(self, points: np.ndarray) -> bool:
        if self.half_line:
            return bool(np.all(points >= 0.0))
        return bool(np.all(np.isfinite(points)))


@dataclass(frozen=True)
class SampleBatch:
    """A (count x n) block of draws plus the metadata needed to reproduce it."""

    points: np.ndarray
    seed: int
    measure_id: int
    mcmc: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points.setflags(write=False)

    @property
    def count(self) -> int:
        return self.points.shape[0]


# -- potential factories ----------------------------------------------------


def gaussian_potential() -> Potential1D:
    return Potential1D(
        value=lambda x: 0.5 * x * x,
        first_derivative=lambda x: np.asarray(x, dtype=float),
        second_derivative=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        kappa_i=-1.0,
        name="gaussian",
    )


def double_well_potential(a: float = 1.0, b: float = 1.0) -> Potential1D:
    """V(x) = a x^4 - b x^2; V'' = 12 a x^2 - 2b, so kappa_i = 2b."""
    if a <= 0 or b < 0:
        raise MeasureConstructionError("double well needs a > 0, b >= 0")
    return Potential1D(
        value=lambda x: a * x**4 - b * x**2,
        first_derivative=lambda x: 4.0 * a * x**3 - 2.0 * b * x,
        second_derivative=lambda x: 12.0 * a * x**2 - 2.0 * b,
        kappa_i=2.0 * b,
        name=f"double_well(a={a},b={b})",
    )


def exponential_potential() -> Potential1D:
    def value(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0.0, np.inf, x)

    return Potential1D(
        value=value,
        first_derivative=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        second_derivative=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        kappa_i=0.0,
        support=HALF_LINE,
        name="exponential",
    )


# -- measure constructors ----------------------------------------------------


def make_gaussian(n: int) -> ProductMeasure:
    """Standard Gaussian product measure gamma_n (exact sampler)."""
    if n < 1:
        raise MeasureConstructionError("invalid dimension: n must be >= 1")
    pot = gaussian_potential()
    return ProductMeasure(
        dimension=n,
        potentials=(pot,) * n,
        kappa=-1.0,
        rho=1.0,
        lam=1.0,
        family_tag="gaussian",
    )


def make_general(
    potentials: Sequence[Potential1D],
    rho: float,
    lam: float | None = None,
) -> ProductMeasure:
    """Product measure for caller-supplied smooth potentials.

    ``rho`` is the hypercontractivity constant the caller vouches for; it is
    never estimated here.  ``lam`` defaults to ``rho`` (always admissible
    since rho <= lam).  Sampling uses MALA.
    """
    pots = tuple(potentials)
    if not pots:
        raise MeasureConstructionError("need at least one potential")
    if any(p.support == HALF_LINE for p in pots):
        raise MeasureConstructionError(
            "make_general supports full-line potentials only"
        )
    return ProductMeasure(
        dimension=len(pots),
        potentials=pots,
        kappa=max(p.kappa_i for p in pots),
        rho=float(rho),
        lam=float(rho if lam is None else lam),
        family_tag="general_smooth",
    )


def make_double_well(
    n: int, a: float = 1.0, b: float = 1.0, rho: float = 0.25, lam: float | None = None
) -> ProductMeasure:
    """Convenience: n-fold product of the double-well factor a x^4 - b x^2.

    The default rho = 0.25 is a deliberately conservative hypercontractivity
    constant for a = b = 1 (the exact log-Sobolev constant is not computed
    here; any rho below it keeps every downstream bound valid).
    """
    if n < 1:
        raise MeasureConstructionError("invalid dimension: n must be >= 1")
    pot = double_well_potential(a, b)
    return make_general((pot,) * n, rho=rho, lam=lam)


def make_exponential(n: int, rho: float = 0.5, lam: float = 1.0) -> ProductMeasure:
    """Product of Exp(1) on R_+^n with sqrt(x) d/dx directional calculus.

    kappa = -1 is the curvature constant of the sqrt(x)-direction commutation
    for this family; rho/lam default to the Laguerre-form constants 1/2 and 1
    and may be overridden from config.
    """
    if n < 1:
        raise MeasureConstructionError("invalid dimension: n must be >= 1")
    pot = exponential_potential()
    return ProductMeasure(
        dimension=n,
        potentials=(pot,) * n,
        kappa=-1.0,
        rho=float(rho),
        lam=float(lam),
        family_tag="exponential",
    )


# -- sampling ----------------------------------------------------------------

_MALA_CHAINS = 256
_MALA_BURN_IN = 10_000
_MALA_TARGET_ACCEPT = 0.574
_RHAT_THRESHOLD = 1.05

_cache_lock = threading.Lock()
_sample_cache: OrderedDict[tuple, SampleBatch] = OrderedDict()
_SAMPLE_CACHE_SIZE = 8


def sample(measure: ProductMeasure, count: int, seed: int) -> SampleBatch:
    """Draw ``count`` points from ``measure``, deterministically in ``seed``.

    Gaussian and exponential families use exact samplers; general smooth
    potentials run per-coordinate MALA chains (the coordinates of a product
    measure are independent 1D targets).  Identical (measure, count, seed)
    always reproduce bitwise-identical points; recent batches are memoised.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    key = (measure.serial, count, int(seed))
    with _cache_lock:
        if key in _sample_cache:
            _sample_cache.move_to_end(key)
            return _sample_cache[key]

    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    if measure.family_tag == "gaussian":
        batch = SampleBatch(
            points=rng.standard_normal((count, measure.dimension)),
            seed=int(seed),
            measure_id=measure.serial,
        )
    elif measure.family_tag == "exponential":
        pts = rng.standard_exponential((count, measure.dimension), method="inv")
        batch = SampleBatch(points=pts, seed=int(seed), measure_id=measure.serial)
    else:
        pts, diag = _mala_sample(measure, count, rng)
        batch = SampleBatch(
            points=pts,
            seed=int(seed),
            measure_id=measure.serial,
            mcmc=True,
            diagnostics=diag,
        )

    with _cache_lock:
        _sample_cache[key] = batch
        while len(_sample_cache) > _SAMPLE_CACHE_SIZE:
            _sample_cache.popitem(last=False)
    return batch


def _potential_values(measure: ProductMeasure, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for i, pot in enumerate(measure.potentials):
        out[:, i] = pot.value(x[:, i])
    return out


def _tamed_drift(g, eps2):
    # Truncated Langevin drift: keeps proposals sane on steep (quartic) tails
    # where the raw drift would overshoot and freeze the chain; the
    # Metropolis correction below uses the same tamed drift both ways, so
    # the stationary law is unchanged.
    return g / (1.0 + 0.5 * eps2 * np.abs(g))


def _mala_step(measure, x, v, g, eps, rng):
    """One tamed-MALA update, accepted independently per (chain, coordinate)."""
    eps2 = eps * eps
    noise = rng.standard_normal(x.shape)
    drift = _tamed_drift(g, eps2)
    prop = x - 0.5 * eps2 * drift + eps * noise
    vp = _potential_values(measure, prop)
    gp = measure.potential_grad(prop)
    drift_p = _tamed_drift(gp, eps2)
    fwd = prop - x + 0.5 * eps2 * drift      # prop - mean(x)
    bwd = x - prop + 0.5 * eps2 * drift_p    # x - mean(prop)
    log_a = v - vp + (fwd * fwd - bwd * bwd) / (2.0 * eps2)
    log_a = np.where(np.isfinite(vp), log_a, -np.inf)
    accept = np.log(rng.random(x.shape)) < log_a
    x = np.where(accept, prop, x)
    v = np.where(accept, vp, v)
    g = np.where(accept, gp, g)
    return x, v, g, accept


def _mala_sample(measure, count, rng):
    n = measure.dimension
    m = min(count, _MALA_CHAINS)
    x = 2.0 * rng.standard_normal((m, n))
    v = _potential_values(measure, x)
    g = measure.potential_grad(x)
    log_eps = np.full(n, np.log(0.5))

    adapt = _MALA_BURN_IN // 2
    for k in range(_MALA_BURN_IN):
        eps = np.exp(log_eps)
        x, v, g, accept = _mala_step(measure, x, v, g, eps, rng)
        if k < adapt:
            rate = accept.mean(axis=0)
            gain = 0.5 / (1.0 + k / 50.0) ** 0.7
            log_eps += gain * (rate - _MALA_TARGET_ACCEPT)

    eps = np.exp(log_eps)

    # Probe lag-1 autocorrelation to pick the thinning stride.
    probe = np.empty((300, m, n))
    for k in range(300):
        x, v, g, _ = _mala_step(measure, x, v, g, eps, rng)
        probe[k] = x
    centred = probe - probe.mean(axis=0, keepdims=True)
    # Pool the lag-1 estimate across chains (per coordinate) for stability.
    num = (centred[:-1] * centred[1:]).sum(axis=(0, 1))
    den = (centred * centred).sum(axis=(0, 1))
    lag1 = float(np.max(num / np.maximum(den, 1e-300)))
    if lag1 >= 0.1:
        thin = int(np.ceil(np.log(0.1) / np.log(min(max(lag1, 1e-6), 0.999))))
    else:
        thin = 1
    thin = int(np.clip(thin, 1, 64))

    keeps = -(-count // m)  # ceil
    out = np.empty((keeps, m, n))
    acc_count = 0
    acc_total = 0
    for k in range(keeps):
        for _ in range(thin):
            x, v, g, accept = _mala_step(measure, x, v, g, eps, rng)
            acc_count += int(accept.sum())
            acc_total += accept.size
        out[k] = x
    points = out.reshape(keeps * m, n)[:count].copy()

    rhat = _split_rhat(out) if keeps >= 8 else None
    diag = {
        "chains": m,
        "thin": thin,
        "lag1_autocorr": lag1,
        "acceptance": acc_count / max(acc_total, 1),
        "step": [float(e) for e in eps],
        "rhat": rhat,
    }
    if rhat is not None and rhat > _RHAT_THRESHOLD:
        raise SamplerQualityError(
            f"split R-hat {rhat:.4f} exceeds {_RHAT_THRESHOLD}; "
            f"diagnostics: {diag}"
        )
    return points, diag


def _split_rhat(draws: np.ndarray) -> float:
    """Split R-hat over (keeps, chains, coords), maximised over coordinates."""
    keeps = draws.shape[0] // 2 * 2
    half = keeps // 2
    seq = np.concatenate([draws[:half], draws[half:keeps]], axis=1)  # (half, 2m, n)
    means = seq.mean(axis=0)
    variances = seq.var(axis=0, ddof=1)
    w = variances.mean(axis=0)
    b = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b / half
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return float(np.nanmax(rhat))
