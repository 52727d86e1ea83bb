"""Diffusion semigroup P_t for the generator L = Laplacian - grad V . grad.

Backends:

* ``mehler_quadrature`` -- Gaussian measures only.  P_t f(x) is the integral
  of f(x e^{-t} + sqrt(1 - e^{-2t}) y) against gamma_n, computed by tensor
  Gauss-Hermite quadrature (n <= 4).
* ``mehler_mc``         -- same representation, Monte Carlo over y (any n).
* ``sde_euler``         -- Euler-Maruyama simulation of
  dX = -grad V(X) dt + sqrt(2) dW for general smooth potentials, with the
  per-coordinate path weight exp(-int_0^t V_i''(X_s^i) ds) available for the
  gradient representation grad P_t f = E[grad f(X_t) . weight].

Gradients can be formed three ways: the exact Gaussian commutation
d_i P_t f = e^{-t} P_t(d_i f), central finite differences of P_t f (with
common random numbers on the SDE backend), or the path-weight estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .estimators import EstimateWithCI, MCParams, derive_seed
from .functions import TestFunction, opposite_directions, PreconditionError
from .measures import ProductMeasure
from .reports import InequalityReport, one_sided_report

__all__ = [
    "SemigroupOperator",
    "FeynmanKacPath",
    "BackendError",
    "make_operator",
    "apply",
    "apply_batch",
    "grad_apply",
    "kernel_harris_check",
    "generator_apply",
    "mehler_value_batch",
    "mehler_grad_batch",
]

MEHLER_QUADRATURE = "mehler_quadrature"
MEHLER_MC = "mehler_mc"
SDE_EULER = "sde_euler"

_MAX_TENSOR_DIM = 4


class BackendError(ValueError):
    """Backend and measure (or method) do not match."""


@dataclass(frozen=True)
class SemigroupOperator:
    """Immutable evaluator configuration for P_t under one measure."""

    measure: ProductMeasure
    backend: str
    quadrature_order: int = 64
    mc_count: int = 4096
    sde_step: float | None = None
    paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.backend not in (MEHLER_QUADRATURE, MEHLER_MC, SDE_EULER):
            raise BackendError(f"unknown backend {self.backend!r}")
        if self.backend.startswith("mehler") and self.measure.family_tag != "gaussian":
            raise BackendError("Mehler backends require a Gaussian measure")
        if self.backend == SDE_EULER and self.measure.half_line:
            raise BackendError("SDE backend supports full-line measures only")
        if self.backend == MEHLER_QUADRATURE and self.measure.dimension > _MAX_TENSOR_DIM:
            raise BackendError(
                f"tensor quadrature limited to n <= {_MAX_TENSOR_DIM}; use mehler_mc"
            )

    @property
    def step(self) -> float:
        if self.sde_step is not None:
            return self.sde_step
        kappa_plus = max(self.measure.kappa, 0.0)
        return 1e-3 * min(1.0, 1.0 / kappa_plus) if kappa_plus > 0 else 1e-3


@dataclass(frozen=True)
class FeynmanKacPath:
    """One batch of simulated paths with accumulated curvature weights."""

    endpoints: np.ndarray          # (paths, n) states at time t
    weights: np.ndarray            # (paths, n) exp(-int V_i''(X^i_s) ds)
    t: float
    steps: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError("path weights must stay positive")


def make_operator(measure: ProductMeasure, backend: str | None = None, **kw) -> SemigroupOperator:
    """Operator with a sensible default backend for the measure."""
    if backend is None:
        if measure.family_tag == "gaussian":
            backend = MEHLER_QUADRATURE if measure.dimension <= _MAX_TENSOR_DIM else MEHLER_MC
        else:
            backend = SDE_EULER
    return SemigroupOperator(measure=measure, backend=backend, **kw)


# -- Gauss-Hermite machinery ---------------------------------------------------

_gh_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_tensor_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _gh_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _gh_cache:
        x, w = np.polynomial.hermite_e.hermegauss(order)
        _gh_cache[order] = (x, w / w.sum())
    return _gh_cache[order]


def _gh_tensor(order: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Full tensor nodes (order^n, n) and product weights, cached for n <= 3."""
    key = (order, n)
    if key not in _tensor_cache:
        x, w = _gh_1d(order)
        grids = np.meshgrid(*([x] * n), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.ones(nodes.shape[0])
        wgrids = np.meshgrid(*([w] * n), indexing="ij")
        for wg in wgrids:
            weights *= wg.ravel()
        _tensor_cache[key] = (nodes, weights)
    return _tensor_cache[key]


def _gh_blocks(order: int, n: int):
    """Yield (nodes, weights) blocks covering the n-dim tensor grid.

    For n <= 3 a single block; for n = 4 the grid is sliced along the first
    axis so no 64^4 x 4 array is ever materialised.
    """
    if n <= 3:
        yield _gh_tensor(order, n)
        return
    x, w = _gh_1d(order)
    sub_nodes, sub_weights = _gh_tensor(order, n - 1)
    block = np.empty((sub_nodes.shape[0], n))
    block[:, 1:] = sub_nodes
    for xi, wi in zip(x, w):
        block[:, 0] = xi
        yield block.copy(), wi * sub_weights


def _mehler_arg(x: np.ndarray, t: float, z: np.ndarray) -> np.ndarray:
    decay = np.exp(-t)
    spread = np.sqrt(-np.expm1(-2.0 * t))
    return x * decay + spread * z


def mehler_value_batch(op: SemigroupOperator, f, t: float, X: np.ndarray,
                       order: int | None = None) -> np.ndarray:
    """P_t f at every row of X by Gauss-Hermite quadrature (Gaussian measure).

    Memory is bounded by evaluating one node block at a time; ``order``
    defaults to a size appropriate for the dimension.
    """
    fn = f.eval_batch if isinstance(f, TestFunction) else f
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if t == 0.0:
        return fn(X)
    order = order or _batch_order(n)
    out = np.zeros(X.shape[0])
    for nodes, weights in _gh_blocks(order, n):
        for sl, wsl in _node_slices(nodes, weights, X.shape[0]):
            args = _mehler_arg(X[:, None, :], t, sl[None, :, :])
            vals = fn(args.reshape(-1, n)).reshape(X.shape[0], -1)
            out += vals @ wsl
    return out


def mehler_grad_batch(op: SemigroupOperator, f, t: float, X: np.ndarray,
                      order: int | None = None) -> np.ndarray:
    """grad P_t f at every row of X via exact commutation e^{-t} P_t(grad f)."""
    fn = f.grad_batch if isinstance(f, TestFunction) else f
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if t == 0.0:
        return fn(X)
    order = order or _batch_order(n)
    out = np.zeros_like(X)
    for nodes, weights in _gh_blocks(order, n):
        for sl, wsl in _node_slices(nodes, weights, X.shape[0]):
            args = _mehler_arg(X[:, None, :], t, sl[None, :, :])
            grads = fn(args.reshape(-1, n)).reshape(X.shape[0], -1, n)
            out += np.einsum("nmk,m->nk", grads, wsl)
    return np.exp(-t) * out


def _batch_order(n: int) -> int:
    return {1: 64, 2: 32, 3: 16, 4: 8}.get(n, 8)


def _node_slices(nodes: np.ndarray, weights: np.ndarray, batch: int,
                 budget: int = 4_000_000):
    """Split quadrature nodes so batch * block stays within the eval budget."""
    m = nodes.shape[0]
    step = max(1, budget // max(batch, 1))
    for start in range(0, m, step):
        yield nodes[start:start + step], weights[start:start + step]


# -- SDE machinery ---------------------------------------------------------------


def _simulate_paths(op: SemigroupOperator, starts: np.ndarray, t: float, seed: int,
                    with_weights: bool = False) -> FeynmanKacPath:
    """Euler-Maruyama paths of dX = -grad V dt + sqrt(2) dW from given starts.

    The curvature integral for the weights uses the trapezoid rule on the
    same grid as the integrator.
    """
    measure = op.measure
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dt = op.step
    steps = int(np.floor(t / dt + 1e-12))
    remainder = t - steps * dt
    x = starts.copy()
    integral = None
    if with_weights:
        integral = np.zeros_like(x)
        curv_prev = measure.potential_curvature(x)

    def advance(x, h, curv_prev):
        noise = rng.standard_normal(x.shape)
        x_new = x - measure.potential_grad(x) * h + np.sqrt(2.0 * h) * noise
        curv_new = None
        if with_weights:
            curv_new = measure.potential_curvature(x_new)
            integral[...] += 0.5 * h * (curv_prev + curv_new)
        return x_new, curv_new

    curv = curv_prev if with_weights else None
    total = 0
    for _ in range(steps):
        x, curv = advance(x, dt, curv)
        total += 1
    if remainder > 1e-15:
        x, curv = advance(x, remainder, curv)
        total += 1
    weights = np.exp(-integral) if with_weights else np.ones_like(x)
    return FeynmanKacPath(endpoints=x, weights=weights, t=t, steps=total)


def _simulate_coupled(op: SemigroupOperator, X: np.ndarray, reps: int, t: float,
                      seed: int) -> np.ndarray:
    """Paths from each row of X driven by one shared set of Brownian draws.

    The coupling (identical noise for every start) is what makes central
    finite differences of P_t f across neighbouring starts usable; each
    start's average over ``reps`` paths stays unbiased.
    """
    measure = op.measure
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dt = op.step
    steps = int(np.floor(t / dt + 1e-12))
    remainder = t - steps * dt
    x = np.broadcast_to(X[:, None, :], (X.shape[0], reps, X.shape[1])).copy()

    def advance(x, h):
        noise = rng.standard_normal((reps, X.shape[1]))
        flat = x.reshape(-1, X.shape[1])
        drift = measure.potential_grad(flat).reshape(x.shape)
        return x - drift * h + np.sqrt(2.0 * h) * noise[None, :, :]

    for _ in range(steps):
        x = advance(x, dt)
    if remainder > 1e-15:
        x = advance(x, remainder)
    return x


def feynman_kac_grad_pair(op: SemigroupOperator, f: TestFunction, starts: np.ndarray,
                          t_grid: np.ndarray, seed: int):
    """Two independent path-weight gradient draws per start, at several times.

    Returns, per time in the (ascending) grid, a pair of (N, n) arrays whose
    expectations both equal grad P_t f at the start points.  Used to form
    unbiased estimates of |grad P_t f|^2.
    """
    measure = op.measure
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dt = op.step
    results = []
    x1 = starts.copy()
    x2 = starts.copy()
    i1 = np.zeros_like(x1)
    i2 = np.zeros_like(x2)
    c1 = measure.potential_curvature(x1)
    c2 = measure.potential_curvature(x2)
    t_now = 0.0
    for t_target in np.asarray(t_grid, dtype=float):
        while t_now < t_target - 1e-12:
            h = min(dt, t_target - t_now)
            for x, integ, curv, which in ((x1, i1, c1, 0), (x2, i2, c2, 1)):
                noise = rng.standard_normal(x.shape)
                x_new = x - measure.potential_grad(x) * h + np.sqrt(2.0 * h) * noise
                curv_new = measure.potential_curvature(x_new)
                integ += 0.5 * h * (curv + curv_new)
                if which == 0:
                    x1, c1 = x_new, curv_new
                else:
                    x2, c2 = x_new, curv_new
            t_now += h
        g1 = f.grad_batch(x1) * np.exp(-i1)
        g2 = f.grad_batch(x2) * np.exp(-i2)
        results.append((g1, g2))
    return results


# -- public operations -------------------------------------------------------------


def apply(op: SemigroupOperator, f, t: float, x) -> EstimateWithCI:
    """P_t f(x) as an estimate; zero-width CI for the quadrature backend."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    fn = f.eval_batch if isinstance(f, TestFunction) else f
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0.0:
        return EstimateWithCI.exact(float(fn(x)[0]), count=1, seed=op.seed,
                                    tag="identity_t0")

    if op.backend == MEHLER_QUADRATURE:
        val = mehler_value_batch(op, f, t, x, order=op.quadrature_order)[0]
        return EstimateWithCI.exact(float(val), count=op.quadrature_order,
                                    seed=op.seed, tag="mehler_gh")
    if op.backend == MEHLER_MC:
        rng = np.random.default_rng(np.random.SeedSequence(derive_seed(op.seed, "mehler_mc", t)))
        z = rng.standard_normal((op.mc_count, x.shape[1]))
        vals = fn(_mehler_arg(x, t, z))
        return EstimateWithCI.from_samples(vals, MCParams(seed=op.seed), "mehler_mc")

    if t < op.step:
        raise BackendError(
            f"sde backend cannot resolve t = {t} below its step {op.step}"
        )
    starts = np.repeat(x, op.paths, axis=0)
    path = _simulate_paths(op, starts, t, derive_seed(op.seed, "sde_apply", t))
    vals = fn(path.endpoints)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite f along SDE paths")
    return EstimateWithCI.from_samples(vals, MCParams(seed=op.seed), "sde_euler")


def apply_batch(op: SemigroupOperator, f, t: float, X: np.ndarray,
                seed_label: str = "apply_batch") -> np.ndarray:
    """P_t f at many points; SDE starts share one noise stream (CRN)."""
    fn = f.eval_batch if isinstance(f, TestFunction) else f
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if t == 0.0:
        return fn(X)
    if op.backend == MEHLER_QUADRATURE:
        return mehler_value_batch(op, f, t, X, order=op.quadrature_order)
    if op.backend == MEHLER_MC:
        rng = np.random.default_rng(np.random.SeedSequence(derive_seed(op.seed, seed_label, t)))
        z = rng.standard_normal((op.mc_count, X.shape[1]))
        out = np.zeros(X.shape[0])
        for i in range(X.shape[0]):
            out[i] = float(np.mean(fn(_mehler_arg(X[i:i + 1], t, z))))
        return out
    if t < op.step:
        raise BackendError(
            f"sde backend cannot resolve t = {t} below its step {op.step}"
        )
    reps = max(1, op.paths // max(X.shape[0], 1))
    ends = _simulate_coupled(op, X, reps, t, derive_seed(op.seed, seed_label, t))
    vals = fn(ends.reshape(-1, X.shape[1])).reshape(X.shape[0], reps)
    return vals.mean(axis=1)


def grad_apply(op: SemigroupOperator, f: TestFunction, t: float, x,
               method: str = "commuted", fd_step: float = 1e-4,
               ) -> list[EstimateWithCI]:
    """grad P_t f(x) per coordinate.

    ``commuted`` uses the exact Gaussian identity e^{-t} P_t(d_i f);
    ``finite_diff`` differentiates ``apply`` centrally (common random numbers
    on the SDE backend); ``feynman_kac`` averages d_i f(X_t) times the
    curvature path weight.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    if method == "commuted":
        if not op.backend.startswith("mehler"):
            raise BackendError("commuted gradients require a Gaussian backend")
        out = []
        for i in range(n):
            part = _coordinate_derivative(f, i)
            est = apply(op, part, t, x)
            decay = np.exp(-t)
            out.append(replace(est, value=decay * est.value,
                               std_error=decay * est.std_error,
                               ci_low=decay * est.ci_low,
                               ci_high=decay * est.ci_high,
                               estimator_tag="commuted"))
        return out

    if method == "finite_diff":
        starts = []
        for i in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[i] += fd_step
            xm[i] -= fd_step
            starts.extend([xp, xm])
        starts = np.vstack(starts)
        if op.backend == SDE_EULER:
            # Coupled paths: the same Brownian draws drive every start, so
            # the per-path central difference is an O(h) quantity with its
            # own Monte Carlo spread.
            reps = max(2, op.paths // starts.shape[0])
            ends = _simulate_coupled(op, starts, reps, t,
                                     derive_seed(op.seed, "grad_fd", t))
            fn = f.eval_batch
            vals = fn(ends.reshape(-1, n)).reshape(starts.shape[0], reps)
            mc = MCParams(seed=op.seed)
            out = []
            for i in range(n):
                per_path = (vals[2 * i] - vals[2 * i + 1]) / (2.0 * fd_step)
                out.append(EstimateWithCI.from_samples(per_path, mc, "finite_diff"))
            return out
        vals = apply_batch(op, f, t, starts, seed_label="grad_fd")
        out = []
        for i in range(n):
            d = (vals[2 * i] - vals[2 * i + 1]) / (2.0 * fd_step)
            out.append(EstimateWithCI.exact(float(d), count=op.paths, seed=op.seed,
                                            tag="finite_diff"))
        return out

    if method == "feynman_kac":
        if op.backend != SDE_EULER:
            raise BackendError("feynman_kac gradients require the sde backend")
        if f.smoothness != "c2" and f.grad_fn is None:
            raise PreconditionError("feynman_kac needs a C1 gradient oracle")
        starts = np.repeat(x[None, :], op.paths, axis=0)
        path = _simulate_paths(op, starts, t, derive_seed(op.seed, "grad_fk", t),
                               with_weights=True)
        contrib = f.grad_batch(path.endpoints) * path.weights
        mc = MCParams(seed=op.seed)
        return [EstimateWithCI.from_samples(contrib[:, i], mc, "feynman_kac")
                for i in range(n)]

    raise ValueError(f"unknown gradient method {method!r}")


def _coordinate_derivative(f: TestFunction, i: int):
    def h(X):
        return f.grad_batch(X)[:, i]
    return h


def generator_apply(f: TestFunction, measure: ProductMeasure, X: np.ndarray) -> np.ndarray:
    """L f = Laplacian f - grad V . grad f from the oracles, on a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0])
    for i in range(X.shape[1]):
        out += f.hessian_entry_batch(i, i, X)
    out -= np.sum(measure.potential_grad(X) * f.grad_batch(X), axis=1)
    return out


def kernel_harris_check(op: SemigroupOperator, f: TestFunction, g: TestFunction,
                        t: float, x) -> InequalityReport:
    """Check P_t(fg)(x) <= P_t f(x) P_t g(x) for an opposite-monotone pair."""
    if not opposite_directions(f, g):
        raise PreconditionError(
            "kernel Harris check needs monotone functions of opposite direction"
        )

    def prod(X):
        return f.eval_batch(X) * g.eval_batch(X)

    lhs = apply(op, prod, t, x)
    pf = apply(op, f, t, x)
    pg = apply(op, g, t, x)
    rhs_val = pf.value * pg.value
    rhs_se = float(np.hypot(pf.std_error * abs(pg.value), pg.std_error * abs(pf.value)))
    rhs = EstimateWithCI.from_value_se(rhs_val, rhs_se, MCParams(seed=op.seed),
                                       pf.count, "product_of_estimates")
    return one_sided_report(
        f"kernel_harris[{f.name},{g.name},t={t:g}]",
        lhs,
        rhs,
        config={"t": t, "x": np.atleast_1d(x).tolist(), "backend": op.backend},
    )
