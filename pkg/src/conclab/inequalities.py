"""Both sides of every inequality under study, rendered as pass/fail reports:
Harris negative association, Poincare, log-Sobolev, hypercontractivity,
entropy decay, the entropy-Orlicz bound with constant C_{rho,kappa}, the
Herbst moment-generating-function step, the lower-tail bound it integrates
to, and closed-form comparison baselines.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .estimators import (
    EstimateWithCI,
    MCParams,
    _entropy_from_values,
    carre_du_champ,
    derive_seed,
    estimate_moments,
    gamma_orlicz_sq,
    grad_orlicz_sq,
    phi_eval,
)
from .functions import (
    CONSTANT,
    F_MINUS,
    F_PLUS,
    PreconditionError,
    TestFunction,
    classify,
    opposite_directions,
)
from .measures import ProductMeasure, sample
from .reports import InequalityReport, one_sided_report
from .semigroup import SemigroupOperator, mehler_value_batch

__all__ = [
    "BoundConstants",
    "MgfOverflowError",
    "constants",
    "harris_check",
    "functional_check",
    "thm2_check",
    "gaussian_entropy_variance_check",
    "lower_tail_bound",
    "herbst_mgf_check",
    "baseline_bound",
    "gamma_direction_check",
]


class MgfOverflowError(OverflowError):
    """exp(-theta f) overflowed; reduce theta_max."""


@dataclass(frozen=True)
class BoundConstants:
    """Constants entering the entropy-Orlicz bound and its tail consequence.

    C_rho_kappa = 2 e^{[1 + kappa/rho]_+} / (rho (1 - e^{-2 rho T})) with the
    default horizon T = 1/(2 rho).  herbst_c = 1/(2 C) so the reported
    lower-tail bound reads exp(-t^2 / (4 C ||grad f||_phi^2)).
    """

    rho: float
    kappa: float
    T: float
    C_rho_kappa: float
    herbst_c: float

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "kappa": self.kappa,
            "T": self.T,
            "C_rho_kappa": self.C_rho_kappa,
            "herbst_c": self.herbst_c,
        }


def constants(rho: float, kappa: float, T: float | None = None) -> BoundConstants:
    if rho <= 0:
        raise ValueError("rho must be positive")
    T = 1.0 / (2.0 * rho) if T is None else float(T)
    if T <= 0:
        raise ValueError("T must be positive")
    bracket = max(0.0, 1.0 + kappa / rho)
    c = 2.0 * np.exp(bracket) / (rho * -np.expm1(-2.0 * rho * T))
    return BoundConstants(rho=float(rho), kappa=float(kappa), T=T,
                          C_rho_kappa=float(c), herbst_c=float(1.0 / (2.0 * c)))


def _jackknife_product_mean(a: np.ndarray, b: np.ndarray, mc: MCParams,
                            tag: str) -> EstimateWithCI:
    """Estimate E[a] E[b] with a delete-one jackknife SE on the shared batch."""
    n = a.size
    sa, sb = a.sum(), b.sum()
    value = (sa / n) * (sb / n)
    loo = ((sa - a) / (n - 1)) * ((sb - b) / (n - 1))
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return EstimateWithCI.from_value_se(value, se, mc, n, tag)


def harris_check(f: TestFunction, g: TestFunction, measure: ProductMeasure,
                 mc: MCParams) -> InequalityReport:
    """E[f g] <= E[f] E[g] for opposite-monotone f, g under a product measure."""
    if not opposite_directions(f, g):
        raise PreconditionError(
            "Harris check requires monotone functions of opposite direction "
            f"(got {f.direction} / {g.direction}); positive association is "
            "not asserted"
        )
    X = sample(measure, mc.samples, mc.seed).points
    fv = f.eval_batch(X)
    gv = g.eval_batch(X)
    lhs = EstimateWithCI.from_samples(fv * gv, mc, "mc_mean")
    rhs = _jackknife_product_mean(fv, gv, mc, "product_of_means")
    return one_sided_report(
        f"harris[{f.name},{g.name}]", lhs, rhs,
        config={"n": measure.dimension, "family": measure.family_tag},
    )


def functional_check(kind: str, f: TestFunction, measure: ProductMeasure,
                     op: SemigroupOperator | None = None, t: float = 0.5,
                     mc: MCParams | None = None) -> InequalityReport:
    """Classical functional inequalities for (L, mu).

    * ``poincare``:        lam Var(f) <= E[sum Gamma_i(f)^2]
    * ``logsob``:          rho Ent(f^2) <= 2 E[sum Gamma_i(f)^2]
    * ``hypercontractive``: ||P_t f||_2 <= ||f||_p at p = 1 + e^{-2 rho t}
    * ``entropy_decay``:    Ent(P_t f) <= e^{-2 t rho} Ent(f), f > 0
    """
    mc = mc or MCParams()
    cfg = {"kind": kind, "n": measure.dimension, "family": measure.family_tag}
    if kind == "poincare":
        X = sample(measure, mc.samples, mc.seed).points
        fv = f.eval_batch(X)
        var = estimate_moments(f, measure, mc).variance
        lhs = EstimateWithCI.from_value_se(
            measure.lam * var.value, measure.lam * var.std_error, mc, var.count,
            "lam_times_variance")
        energy = np.sum(carre_du_champ(measure, f, X) ** 2, axis=1)
        rhs = EstimateWithCI.from_samples(energy, mc, "mc_dirichlet")
        return one_sided_report(f"poincare[{f.name}]", lhs, rhs,
                                constants={"lam": measure.lam}, config=cfg)

    if kind == "logsob":
        X = sample(measure, mc.samples, mc.seed).points
        sq = f.eval_batch(X) ** 2
        if np.any(sq <= 0.0):
            raise PreconditionError("logsob needs f^2 > 0 on the sample")
        ent = _entropy_from_values(sq, mc)
        lhs = EstimateWithCI.from_value_se(
            measure.rho * ent.value, measure.rho * ent.std_error, mc, ent.count,
            "rho_times_entropy")
        energy = 2.0 * np.sum(carre_du_champ(measure, f, X) ** 2, axis=1)
        rhs = EstimateWithCI.from_samples(energy, mc, "mc_dirichlet")
        return one_sided_report(f"logsob[{f.name}]", lhs, rhs,
                                constants={"rho": measure.rho}, config=cfg)

    if kind == "hypercontractive":
        if op is None or not op.backend.startswith("mehler"):
            raise PreconditionError("hypercontractive check needs a Gaussian backend")
        p = 1.0 + np.exp(-2.0 * measure.rho * t)
        X = sample(measure, mc.samples, mc.seed).points
        ptf = mehler_value_batch(op, f, t, X)
        sq = ptf * ptf
        mean_sq = float(np.mean(sq))
        se_sq = float(np.std(sq, ddof=1) / np.sqrt(sq.size))
        lhs = EstimateWithCI.from_value_se(
            np.sqrt(mean_sq), se_sq / (2.0 * np.sqrt(mean_sq)) if mean_sq > 0 else 0.0,
            mc, sq.size, "l2_norm_of_ptf")
        fp = np.abs(f.eval_batch(X)) ** p
        mean_fp = float(np.mean(fp))
        se_fp = float(np.std(fp, ddof=1) / np.sqrt(fp.size))
        val = mean_fp ** (1.0 / p)
        dval = val / (p * mean_fp) if mean_fp > 0 else 0.0
        rhs = EstimateWithCI.from_value_se(val, abs(dval) * se_fp, mc, fp.size,
                                           "lp_norm")
        return one_sided_report(
            f"hypercontractive[{f.name},t={t:g}]", lhs, rhs,
            constants={"rho": measure.rho, "p": p},
            config=cfg,
            notes=("sharp exponent p = 1 + exp(-2 rho t) used",),
        )

    if kind == "entropy_decay":
        if op is None or not op.backend.startswith("mehler"):
            raise PreconditionError("entropy decay check needs a Gaussian backend")
        X = sample(measure, mc.samples, mc.seed).points
        gv = f.eval_batch(X)
        if np.any(gv <= 0.0):
            raise PreconditionError("entropy decay needs a positive function")
        ptg = mehler_value_batch(op, f, t, X)
        lhs = _entropy_from_values(ptg, mc)
        base_seed = derive_seed(mc.seed, "entropy_decay_base")
        base_vals = f.eval_batch(sample(measure, mc.samples, base_seed).points)
        ent0 = _entropy_from_values(base_vals, mc)
        decay = float(np.exp(-2.0 * t * measure.rho))
        rhs = EstimateWithCI.from_value_se(decay * ent0.value, decay * ent0.std_error,
                                           mc, ent0.count, "decayed_entropy")
        return one_sided_report(f"entropy_decay[{f.name},t={t:g}]", lhs, rhs,
                                constants={"rho": measure.rho}, config=cfg)

    raise ValueError(f"unknown functional inequality {kind!r}")


def _require_f_plus(f: TestFunction, measure: ProductMeasure, mc: MCParams):
    if f.class_tag == F_PLUS:
        return
    if f.smoothness != "c2":
        raise PreconditionError(f"{f.name} is not C2, cannot establish class f_plus")
    report = classify(f, measure, min(mc.samples, 10_000),
                      derive_seed(mc.seed, "classify"), tol=1e-8)
    if report.observed != F_PLUS:
        raise PreconditionError(
            f"{f.name} is not in class f_plus (observed {report.observed})"
        )


def thm2_check(f: TestFunction, measure: ProductMeasure, mc: MCParams,
               T: float | None = None) -> InequalityReport:
    """Ent(e^{-f}) <= C_{rho,kappa} ||grad f||_phi^2 E[e^{-f}] for f in F_+."""
    _require_f_plus(f, measure, mc)
    bc = constants(measure.rho, measure.kappa, T)

    X = sample(measure, mc.samples, mc.seed).points
    expnf = np.exp(-f.eval_batch(X))
    lhs = _entropy_from_values(expnf, mc)

    osq = grad_orlicz_sq(f, measure, mc)
    mean_exp = EstimateWithCI.from_samples(expnf, mc, "mc_mean")
    rhs_val = bc.C_rho_kappa * osq.value * mean_exp.value
    rhs_se = bc.C_rho_kappa * float(np.hypot(osq.value * mean_exp.std_error,
                                             mean_exp.value * osq.std_error))
    rhs = EstimateWithCI.from_value_se(rhs_val, rhs_se, mc, mean_exp.count,
                                       "C_orlicz_mean")
    return one_sided_report(
        f"thm2[{f.name},n={measure.dimension},{measure.family_tag}]",
        lhs, rhs, constants=bc.as_dict(),
        config={"n": measure.dimension, "family": measure.family_tag,
                "samples": mc.samples, "seed": mc.seed},
    )


def gaussian_entropy_variance_check(f: TestFunction, measure: ProductMeasure,
                                    mc: MCParams) -> InequalityReport:
    """Gaussian refinement Ent(e^{-f}) <= E[e^{-f}] Var(f), f in F_+."""
    if measure.family_tag != "gaussian":
        raise PreconditionError("entropy-variance refinement is Gaussian-only")
    _require_f_plus(f, measure, mc)
    X = sample(measure, mc.samples, mc.seed).points
    expnf = np.exp(-f.eval_batch(X))
    lhs = _entropy_from_values(expnf, mc)
    var = estimate_moments(f, measure, mc).variance
    mean_exp = EstimateWithCI.from_samples(expnf, mc, "mc_mean")
    rhs_val = mean_exp.value * var.value
    rhs_se = float(np.hypot(var.value * mean_exp.std_error,
                            mean_exp.value * var.std_error))
    rhs = EstimateWithCI.from_value_se(rhs_val, rhs_se, mc, var.count,
                                       "mean_times_variance")
    return one_sided_report(
        f"gaussian_entropy_variance[{f.name},n={measure.dimension}]", lhs, rhs,
        config={"n": measure.dimension, "samples": mc.samples, "seed": mc.seed},
    )


def lower_tail_bound(bound_constants: BoundConstants, orlicz_sq: float,
                     t: float) -> float:
    """exp(-t^2 / (4 C_{rho,kappa} ||grad f||_phi^2)), the Herbst-integrated
    lower-tail bound."""
    if orlicz_sq <= 0:
        raise ValueError("orlicz_sq must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(np.exp(-t * t / (4.0 * bound_constants.C_rho_kappa * orlicz_sq)))


def herbst_mgf_check(f: TestFunction, measure: ProductMeasure,
                     bound_constants: BoundConstants, theta_grid,
                     mc: MCParams) -> InequalityReport:
    """E[e^{-theta (f - E f)}] <= exp(C ||grad f||_phi^2 theta^2) on a grid.

    Returns the report at the worst (smallest-margin) grid point; the notes
    record every grid value.
    """
    _require_f_plus(f, measure, mc)
    theta_grid = [float(th) for th in theta_grid]
    if any(th < 0 for th in theta_grid):
        raise ValueError("theta grid must be nonnegative")
    osq = grad_orlicz_sq(f, measure, mc)
    mean_seed = derive_seed(mc.seed, "herbst_mean")
    m = float(np.mean(f.eval_batch(sample(measure, mc.samples, mean_seed).points)))
    X = sample(measure, mc.samples, mc.seed).points
    fv = f.eval_batch(X)

    worst = None
    notes = []
    for th in theta_grid:
        with np.errstate(over="raise"):
            try:
                vals = np.exp(-th * (fv - m))
            except FloatingPointError as exc:
                raise MgfOverflowError(
                    f"MGF overflow at theta={th}; reduce theta_max"
                ) from exc
        lhs = EstimateWithCI.from_samples(vals, mc, "mc_mgf")
        rhs_val = float(np.exp(bound_constants.C_rho_kappa * osq.value * th * th))
        rhs_se = rhs_val * bound_constants.C_rho_kappa * th * th * osq.std_error
        rhs = EstimateWithCI.from_value_se(rhs_val, rhs_se, mc, osq.count,
                                           "exp_C_orlicz_theta_sq")
        report = one_sided_report(
            f"herbst_mgf[{f.name},theta={th:g}]", lhs, rhs,
            constants=bound_constants.as_dict(),
            config={"theta": th, "n": measure.dimension},
        )
        notes.append(f"theta={th:g}: lhs={lhs.value:.6g} rhs={rhs.value:.6g} "
                     f"{report.verdict}")
        if worst is None or report.margin < worst.margin:
            worst = report
    return InequalityReport(
        name=worst.name, lhs=worst.lhs, rhs=worst.rhs, margin=worst.margin,
        verdict=worst.verdict, slack=worst.slack, kind=worst.kind,
        constants=worst.constants, config=worst.config, notes=tuple(notes),
    )


def baseline_bound(kind: str, t: float, lip: float | None = None,
                   variance: float | None = None, c: float = 1.0) -> float:
    """Closed-form comparison bounds for report columns.

    * ``gaussian_lipschitz``: 2 exp(-t^2 / (2 Lip^2))
    * ``paouris_valettas``:   exp(-c t^2 / Var), stated for t > 1 (flagged
      otherwise); c defaults to 1 and is configurable since only existence of
      a universal constant is asserted.
    * ``dung``:               exp(-t^2 / Var)
    """
    if kind == "gaussian_lipschitz":
        if lip is None or lip <= 0:
            raise ValueError("gaussian_lipschitz requires a positive Lip constant")
        return float(2.0 * np.exp(-t * t / (2.0 * lip * lip)))
    if kind == "paouris_valettas":
        if variance is None or variance <= 0:
            raise ValueError("paouris_valettas requires a positive variance")
        if t <= 1.0:
            warnings.warn("paouris_valettas bound is stated for t > 1",
                          stacklevel=2)
        return float(np.exp(-c * t * t / variance))
    if kind == "dung":
        if variance is None or variance <= 0:
            raise ValueError("dung requires a positive variance")
        return float(np.exp(-t * t / variance))
    raise ValueError(f"unknown baseline {kind!r}")


def gamma_direction_check(f: TestFunction, measure: ProductMeasure,
                          mc: MCParams, T: float | None = None) -> InequalityReport:
    """Entropy-Orlicz bound for the exponential family with the sqrt(x_i) d_i
    directional calculus and kappa = -1."""
    if measure.family_tag != "exponential":
        raise PreconditionError("gamma direction check needs the exponential family")
    _require_f_plus(f, measure, mc)
    bc = constants(measure.rho, -1.0, T)
    X = sample(measure, mc.samples, mc.seed).points
    expnf = np.exp(-f.eval_batch(X))
    lhs = _entropy_from_values(expnf, mc)
    osq = gamma_orlicz_sq(f, measure, mc)
    mean_exp = EstimateWithCI.from_samples(expnf, mc, "mc_mean")
    rhs_val = bc.C_rho_kappa * osq.value * mean_exp.value
    rhs_se = bc.C_rho_kappa * float(np.hypot(osq.value * mean_exp.std_error,
                                             mean_exp.value * osq.std_error))
    rhs = EstimateWithCI.from_value_se(rhs_val, rhs_se, mc, mean_exp.count,
                                       "C_gamma_orlicz_mean")
    return one_sided_report(
        f"gamma_direction[{f.name},n={measure.dimension}]", lhs, rhs,
        constants=bc.as_dict(),
        config={"n": measure.dimension, "samples": mc.samples, "seed": mc.seed},
    )
