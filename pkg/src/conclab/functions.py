"""Test functions with derivative oracles and monotonicity/curvature tags.

The class tags follow the convention used throughout the package:

* ``f_plus``  -- coordinate-wise monotone with all second partials >= 0,
* ``f_minus`` -- coordinate-wise monotone with all second partials <= 0,
* ``monotone_only`` -- monotone but with mixed-sign second partials (or none),
* ``untagged`` -- no declared structure.

max and median are 1-Lipschitz but only almost-everywhere differentiable;
they are tagged ``lipschitz_ae`` and never fed to Hessian-based checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import expit

from .measures import ProductMeasure, sample

__all__ = [
    "TestFunction",
    "ClassReport",
    "DiffEstimate",
    "PreconditionError",
    "builtin",
    "reflected",
    "differential",
    "classify",
]

F_PLUS = "f_plus"
F_MINUS = "f_minus"
MONOTONE_ONLY = "monotone_only"
UNTAGGED = "untagged"

NONDECREASING = "nondecreasing"
NONINCREASING = "nonincreasing"
CONSTANT = "constant"
NO_DIRECTION = "none"

_FD_STEP = 1e-5


class PreconditionError(ValueError):
    """A function does not satisfy the contract of the requested operation."""


@dataclass(frozen=True)
class TestFunction:
    """Scalar function of n variables with batch evaluation oracles.

    ``eval_fn`` maps an (N, n) array to an (N,) array.  ``grad_fn`` is the
    analytic (or a.e.) gradient; if absent a central finite-difference
    fallback is used.  ``hess_fn(i, j, X)`` returns the (i, j) second partial
    on a batch and must only be present for C^2 functions.
    """

    name: str
    arity: int
    eval_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    hess_fn: Callable[[int, int, np.ndarray], np.ndarray] | None = None
    class_tag: str = UNTAGGED
    smoothness: str = "c2"  # c2 | lipschitz_ae
    direction: str = NO_DIRECTION
    lipschitz: float | None = None
    params: tuple = ()

    def __call__(self, x) -> float:
        return float(self.eval_fn(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.eval_fn(np.asarray(X, dtype=float)), dtype=float)

    def grad(self, x) -> np.ndarray:
        return self.grad_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def grad_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(X), dtype=float)
        return _fd_grad_batch(self.eval_fn, X, _FD_STEP)

    def hessian_entry(self, i: int, j: int, x) -> float:
        return float(
            self.hessian_entry_batch(i, j, np.atleast_2d(np.asarray(x, dtype=float)))[0]
        )

    def hessian_entry_batch(self, i: int, j: int, X: np.ndarray) -> np.ndarray:
        if self.smoothness != "c2":
            raise PreconditionError(
                f"{self.name}: Hessian queried on a non-C2 function"
            )
        X = np.asarray(X, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(i, j, X), dtype=float)
        return _fd_hessian_batch(self.eval_fn, i, j, X, 1e-4)


@dataclass(frozen=True)
class ClassReport:
    declared: str
    observed: str
    confirmed: bool | None  # None when no tag was declared
    monotone_direction: str
    count: int
    seed: int
    tol: float
    min_grad: float
    max_grad: float
    min_hess: float
    max_hess: float


@dataclass(frozen=True)
class DiffEstimate:
    value: np.ndarray | float
    error_estimate: float
    step: float


# -- finite differences -------------------------------------------------------


def _fd_grad_batch(f, X, h):
    out = np.empty_like(X)
    for i in range(X.shape[1]):
        xp = X.copy()
        xm = X.copy()
        xp[:, i] += h
        xm[:, i] -= h
        out[:, i] = (f(xp) - f(xm)) / (2.0 * h)
    return out


def _fd_hessian_batch(f, i, j, X, h):
    if i == j:
        xp = X.copy()
        xm = X.copy()
        xp[:, i] += h
        xm[:, i] -= h
        return (f(xp) - 2.0 * f(X) + f(xm)) / (h * h)
    xpp = X.copy()
    xpm = X.copy()
    xmp = X.copy()
    xmm = X.copy()
    xpp[:, i] += h
    xpp[:, j] += h
    xpm[:, i] += h
    xpm[:, j] -= h
    xmp[:, i] -= h
    xmp[:, j] += h
    xmm[:, i] -= h
    xmm[:, j] -= h
    return (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h * h)


def differential(f: TestFunction, x, request="grad", h: float = 1e-4) -> DiffEstimate:
    """Central finite differences with a Richardson-style error estimate.

    ``request`` is ``"grad"`` or ``("hessian", i, j)``.  Hessian requests
    require a C^2 function.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if request == "grad":
        coarse = _fd_grad_batch(f.eval_fn, X, h)[0]
        fine = _fd_grad_batch(f.eval_fn, X, h / 2.0)[0]
    else:
        kind, i, j = request
        if kind not in ("hessian", "hessian_entry"):
            raise ValueError(f"unknown request {request!r}")
        if f.smoothness != "c2":
            raise PreconditionError(f"{f.name}: Hessian request on non-C2 function")
        coarse = _fd_hessian_batch(f.eval_fn, i, j, X, h)[0]
        fine = _fd_hessian_batch(f.eval_fn, i, j, X, h / 2.0)[0]
    if not np.all(np.isfinite(np.atleast_1d(fine))):
        raise ValueError("non-finite evaluation near x")
    err = float(np.max(np.abs(np.atleast_1d(coarse) - np.atleast_1d(fine)))) / 3.0
    return DiffEstimate(value=fine, error_estimate=err, step=h / 2.0)


# -- builtins -----------------------------------------------------------------


def _make_max(n):
    def grad(X):
        idx = np.argmax(X, axis=1)
        out = np.zeros_like(X)
        out[np.arange(X.shape[0]), idx] = 1.0
        return out

    return TestFunction(
        name="max",
        arity=n,
        eval_fn=lambda X: X.max(axis=1),
        grad_fn=grad,
        class_tag=MONOTONE_ONLY,
        smoothness="lipschitz_ae",
        direction=NONDECREASING,
        lipschitz=1.0,
    )


def _make_median(n):
    if n % 2 == 0:
        raise PreconditionError("median requires odd n")
    k = n // 2

    def value(X):
        return np.partition(X, k, axis=1)[:, k]

    def grad(X):
        med = np.partition(X, k, axis=1)[:, k]
        idx = np.argmax(X == med[:, None], axis=1)  # ties -> lowest index
        out = np.zeros_like(X)
        out[np.arange(X.shape[0]), idx] = 1.0
        return out

    return TestFunction(
        name="median",
        arity=n,
        eval_fn=value,
        grad_fn=grad,
        class_tag=MONOTONE_ONLY,
        smoothness="lipschitz_ae",
        direction=NONDECREASING,
        lipschitz=1.0,
    )


def _make_linear(c):
    c = np.asarray(c, dtype=float)
    if c.ndim != 1:
        raise PreconditionError("linear coefficients must be a vector")
    if np.all(c >= 0.0):
        tag, direction = F_PLUS, NONDECREASING
    elif np.all(c <= 0.0):
        tag, direction = F_MINUS, NONINCREASING
    else:
        tag, direction = UNTAGGED, NO_DIRECTION
    if np.all(c == 0.0):
        direction = CONSTANT
    return TestFunction(
        name="linear",
        arity=c.size,
        eval_fn=lambda X: X @ c,
        grad_fn=lambda X: np.broadcast_to(c, X.shape).copy(),
        hess_fn=lambda i, j, X: np.zeros(X.shape[0]),
        class_tag=tag,
        direction=direction,
        lipschitz=float(np.linalg.norm(c)),
        params=tuple(c),
    )


def _make_constant(n, value):
    base = _make_linear(np.zeros(n))
    return replace(
        base,
        name="constant",
        eval_fn=lambda X: np.full(X.shape[0], float(value)),
        class_tag=F_PLUS,
        lipschitz=0.0,
        params=(float(value),),
    )


def _row_sum(X):
    return X.sum(axis=1)


def _make_softplus_sum(n):
    # f(x) = log(1 + e^s), s = sum(x); grad = sigma(s), hessian = sigma'(s) >= 0
    def hess(i, j, X):
        s = _row_sum(X)
        p = expit(s)
        return p * (1.0 - p)

    return TestFunction(
        name="softplus_sum",
        arity=n,
        eval_fn=lambda X: np.logaddexp(0.0, _row_sum(X)),
        grad_fn=lambda X: np.repeat(expit(_row_sum(X))[:, None], X.shape[1], axis=1),
        hess_fn=hess,
        class_tag=F_PLUS,
        direction=NONDECREASING,
        lipschitz=float(np.sqrt(n)),
    )


def _make_neg_logistic_sum(n):
    # f(x) = -log(1 + e^{-s}); grad = sigma(-s) >= 0, hessian = -sigma'(s) <= 0
    def hess(i, j, X):
        s = _row_sum(X)
        p = expit(s)
        return -p * (1.0 - p)

    return TestFunction(
        name="neg_logistic_sum",
        arity=n,
        eval_fn=lambda X: -np.logaddexp(0.0, -_row_sum(X)),
        grad_fn=lambda X: np.repeat(expit(-_row_sum(X))[:, None], X.shape[1], axis=1),
        hess_fn=hess,
        class_tag=F_MINUS,
        direction=NONDECREASING,
        lipschitz=float(np.sqrt(n)),
    )


def builtin(name: str, n: int | None = None, **params) -> TestFunction:
    """Construct a named builtin test function.

    ``linear`` takes ``c`` (coefficient vector, n inferred), ``constant``
    takes ``value``; everything else takes the arity ``n`` alone.  median
    requires odd n.
    """
    if name == "max":
        return _make_max(_need_n(name, n))
    if name == "median":
        return _make_median(_need_n(name, n))
    if name == "linear":
        if "c" not in params:
            raise PreconditionError("linear requires coefficient vector c")
        return _make_linear(params["c"])
    if name == "constant":
        return _make_constant(_need_n(name, n), params.get("value", 0.0))
    if name == "softplus_sum":
        return _make_softplus_sum(_need_n(name, n))
    if name == "neg_logistic_sum":
        return _make_neg_logistic_sum(_need_n(name, n))
    raise PreconditionError(f"unknown builtin {name!r}")


def _need_n(name, n):
    if n is None or n < 1:
        raise PreconditionError(f"builtin {name!r} needs a positive arity n")
    return int(n)


def reflected(f: TestFunction) -> TestFunction:
    """g(x) = f(-x): flips monotone direction, preserves the Hessian sign."""
    flip = {NONDECREASING: NONINCREASING, NONINCREASING: NONDECREASING}
    hess = None
    if f.hess_fn is not None:
        hess = lambda i, j, X: f.hess_fn(i, j, -X)  # noqa: E731
    grad = None
    if f.grad_fn is not None:
        grad = lambda X: -f.grad_fn(-X)  # noqa: E731
    return replace(
        f,
        name=f"reflected_{f.name}",
        eval_fn=lambda X: f.eval_fn(-X),
        grad_fn=grad,
        hess_fn=hess,
        direction=flip.get(f.direction, f.direction),
    )


def opposite_directions(f: TestFunction, g: TestFunction) -> bool:
    """Whether (f, g) qualify as an opposite-monotone pair (constants match anything)."""
    if CONSTANT in (f.direction, g.direction):
        return True
    return {f.direction, g.direction} == {NONDECREASING, NONINCREASING}


# -- empirical classification -------------------------------------------------


def classify(
    f: TestFunction,
    measure: ProductMeasure,
    count: int,
    seed: int,
    tol: float = 1e-8,
) -> ClassReport:
    """Empirically place ``f`` in {f_plus, f_minus, monotone_only, none}.

    Samples ``count`` points, inspects the signs of all first and second
    partials at tolerance ``tol`` (scaled by the typical gradient size), and
    reports the tightest class consistent with the observations.  A declared
    tag is only confirmed or refuted, never upgraded.
    """
    if f.smoothness != "c2":
        raise PreconditionError(f"classify requires a C2 function, got {f.name}")
    X = sample(measure, count, seed).points
    G = f.grad_batch(X)
    scale = max(1.0, float(np.median(np.abs(G))))
    eps = tol * scale

    min_g, max_g = float(G.min()), float(G.max())
    if min_g >= -eps:
        direction = NONDECREASING
    elif max_g <= eps:
        direction = NONINCREASING
    else:
        direction = NO_DIRECTION

    n = f.arity
    min_h = np.inf
    max_h = -np.inf
    for i in range(n):
        for j in range(i, n):
            h = f.hessian_entry_batch(i, j, X)
            min_h = min(min_h, float(h.min()))
            max_h = max(max_h, float(h.max()))

    if direction == NO_DIRECTION:
        observed = "none"
    elif min_h >= -eps:
        observed = F_PLUS
    elif max_h <= eps:
        observed = F_MINUS
    else:
        observed = MONOTONE_ONLY

    confirmed: bool | None
    if f.class_tag == UNTAGGED:
        confirmed = None
    elif f.class_tag == observed:
        confirmed = True
    elif f.class_tag == MONOTONE_ONLY and observed in (F_PLUS, F_MINUS):
        confirmed = True  # observed class is a subset of the declared one
    else:
        confirmed = False

    return ClassReport(
        declared=f.class_tag,
        observed=observed,
        confirmed=confirmed,
        monotone_direction=direction,
        count=count,
        seed=seed,
        tol=eps,
        min_grad=min_g,
        max_grad=max_g,
        min_hess=float(min_h),
        max_hess=float(max_h),
    )
