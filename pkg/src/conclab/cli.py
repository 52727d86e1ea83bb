"""Batch experiment runner.

``conclab run config.json`` validates the config against a strict JSON
schema, wires measures/functions/checks, executes the selected suites (up to
CONCLAB_WORKERS concurrently), and writes a JSON report plus a CSV summary.
Exit status: 0 when every verdict passes, 2 when some verdicts are
inconclusive but none fail, 1 on a failed verdict or any runtime error.  A
fail halts the remaining suite.

``conclab report file.json --format=csv|json|markdown-summary`` renders a
previously written report; rendering is deterministic (rows sorted by check
name) and the timestamp field is excluded from the determinism canon.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone

import jsonschema
import numpy as np

from . import extremes, inequalities, upper_tail
from .estimators import (
    EstimateWithCI,
    MCParams,
    derive_seed,
    estimate_entropy,
    estimate_moments,
    semigroup_representation,
)
from .functions import (
    F_MINUS,
    F_PLUS,
    PreconditionError,
    TestFunction,
    builtin,
    opposite_directions,
    reflected,
)
from .measures import make_double_well, make_exponential, make_gaussian
from .reports import InequalityReport, equality_report, one_sided_report
from .semigroup import kernel_harris_check, make_operator

__all__ = ["CONFIG_SCHEMA", "load_config", "run", "render_report", "main"]

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["measure", "functions", "suite", "mc"],
    "properties": {
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "n"],
            "properties": {
                "family": {"enum": ["gaussian", "exponential", "double_well"]},
                "n": {"type": "integer", "minimum": 1},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "a": {"type": "number"},
                        "b": {"type": "number"},
                    },
                },
                "rho": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "functions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name"],
                "properties": {
                    "name": {
                        "enum": ["max", "median", "linear", "constant",
                                 "softplus_sum", "neg_logistic_sum"],
                    },
                    "params": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "c": {"type": "array", "items": {"type": "number"}},
                            "value": {"type": "number"},
                        },
                    },
                },
            },
        },
        "suite": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "string"},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "required": ["seed"],
            "properties": {
                "samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
                "confidence": {"type": "number", "exclusiveMinimum": 0,
                               "exclusiveMaximum": 1},
                "bisect_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "paouris_c": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "json": {"type": "string"},
                "csv": {"type": "string"},
            },
        },
    },
}

_T_GRID = (0.25, 0.5, 1.0)
_THETA_GRID = (0.5, 1.0, 2.0)
_SCALING_MAX_N = (128, 1024)
_SCALING_MEDIAN_N = (101, 401)
_SCALING_MAX_BAND = (0.4, 1.6)
_SCALING_MEDIAN_BAND = (1.0, 2.2)
_GUMBEL_N = 10_000
_GUMBEL_KS_LIMIT = 0.1
_GUMBEL_MEDIAN_TOL = 0.05


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from exc
    return cfg


def _build_measure(cfg: dict):
    m = cfg["measure"]
    family, n = m["family"], m["n"]
    if family == "gaussian":
        return make_gaussian(n)
    if family == "exponential":
        return make_exponential(n, rho=m.get("rho", 0.5))
    params = m.get("params", {})
    return make_double_well(n, a=params.get("a", 1.0), b=params.get("b", 1.0),
                            rho=m.get("rho", 0.25))


def _build_function(spec: dict, n: int) -> TestFunction:
    name = spec["name"]
    params = spec.get("params", {})
    if name == "linear":
        c = params.get("c")
        if c is None:
            raise ConfigError("linear function requires params.c")
        if len(c) != n:
            raise ConfigError(f"linear coefficient length {len(c)} != n = {n}")
        return builtin("linear", c=c)
    if name == "constant":
        return builtin("constant", n, value=params.get("value", 0.0))
    return builtin(name, n)


class RunContext:
    """Everything a check builder needs, with per-check derived seeds."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.measure = _build_measure(cfg)
        self.functions = [
            _build_function(spec, self.measure.dimension)
            for spec in cfg["functions"]
        ]
        mc = cfg["mc"]
        self.base_mc = MCParams(
            samples=mc.get("samples", 20_000),
            seed=mc["seed"],
            confidence=mc.get("confidence", 0.99),
            bisect_tol=mc.get("bisect_tol", 1e-4),
        )
        self.constants = cfg.get("constants", {})
        self._op = None

    def mc_for(self, check: str) -> MCParams:
        from dataclasses import replace

        return replace(self.base_mc, seed=derive_seed(self.base_mc.seed, check))

    @property
    def op(self):
        if self._op is None:
            self._op = make_operator(self.measure)
        return self._op

    def pick(self, check: str, predicate, description: str) -> list[TestFunction]:
        chosen = [f for f in self.functions if predicate(f)]
        if not chosen:
            raise PreconditionError(
                f"check {check!r} has no qualifying function: needs {description}"
            )
        return chosen

    def harris_pair(self):
        if len(self.functions) >= 2 and opposite_directions(self.functions[0],
                                                            self.functions[1]):
            return self.functions[0], self.functions[1]
        f = self.functions[0]
        if f.direction == "none":
            raise PreconditionError("harris checks need a monotone function")
        return f, reflected(f)

    def rho_T(self):
        return self.constants.get("T")


def _band_report(name: str, est: EstimateWithCI, lo: float, hi: float,
                 config: dict) -> InequalityReport:
    """Verdict for 'value in [lo, hi]': CI inside -> pass, outside -> fail."""
    if est.ci_low >= lo and est.ci_high <= hi:
        verdict = "pass"
    elif est.ci_high < lo or est.ci_low > hi:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    rhs = EstimateWithCI.exact(hi, tag="band_upper")
    return InequalityReport(
        name=name, lhs=est, rhs=rhs,
        margin=min(est.value - lo, hi - est.value), verdict=verdict,
        slack=0.0, kind="band", constants={"band_low": lo, "band_high": hi},
        config=config,
    )


# -- check builders (each returns a list of reports) ---------------------------


def _check_harris(ctx: RunContext):
    f, g = ctx.harris_pair()
    return [inequalities.harris_check(f, g, ctx.measure, ctx.mc_for("harris"))]


def _check_kernel_harris(ctx: RunContext):
    f, g = ctx.harris_pair()
    n = ctx.measure.dimension
    probes = [np.zeros(n), np.full(n, 0.5)]
    return [kernel_harris_check(ctx.op, f, g, 0.3, x) for x in probes]


def _check_poincare(ctx: RunContext):
    mc = ctx.mc_for("poincare")
    return [inequalities.functional_check("poincare", f, ctx.measure, mc=mc)
            for f in ctx.functions]


def _check_logsob(ctx: RunContext):
    mc = ctx.mc_for("logsob")
    return [inequalities.functional_check("logsob", f, ctx.measure, mc=mc)
            for f in ctx.functions]


def _check_hypercontractive(ctx: RunContext):
    mc = ctx.mc_for("hypercontractive")
    return [inequalities.functional_check("hypercontractive", f, ctx.measure,
                                          op=ctx.op, t=0.5, mc=mc)
            for f in ctx.functions]


def _exp_neg(f: TestFunction) -> TestFunction:
    from dataclasses import replace

    return replace(f, name=f"exp_neg_{f.name}",
                   eval_fn=lambda X: np.exp(-f.eval_fn(X)),
                   grad_fn=None, hess_fn=None, class_tag="untagged",
                   direction="nonincreasing" if f.direction == "nondecreasing"
                   else "nondecreasing", lipschitz=None)


def _check_entropy_decay(ctx: RunContext):
    mc = ctx.mc_for("entropy_decay")
    return [inequalities.functional_check("entropy_decay", _exp_neg(f),
                                          ctx.measure, op=ctx.op, t=1.0, mc=mc)
            for f in ctx.functions]


def _check_thm2(ctx: RunContext):
    mc = ctx.mc_for("thm2")
    fs = ctx.pick("thm2", lambda f: f.class_tag == F_PLUS, "class f_plus")
    return [inequalities.thm2_check(f, ctx.measure, mc, T=ctx.rho_T())
            for f in fs]


def _check_gaussian_entropy_variance(ctx: RunContext):
    mc = ctx.mc_for("gaussian_entropy_variance")
    fs = ctx.pick("gaussian_entropy_variance", lambda f: f.class_tag == F_PLUS,
                  "class f_plus")
    return [inequalities.gaussian_entropy_variance_check(f, ctx.measure, mc)
            for f in fs]


def _check_herbst_mgf(ctx: RunContext):
    mc = ctx.mc_for("herbst_mgf")
    fs = ctx.pick("herbst_mgf", lambda f: f.class_tag == F_PLUS, "class f_plus")
    bc = inequalities.constants(ctx.measure.rho, ctx.measure.kappa, ctx.rho_T())
    return [inequalities.herbst_mgf_check(f, ctx.measure, bc, _THETA_GRID, mc)
            for f in fs]


def _check_lower_tail(ctx: RunContext):
    from .estimators import grad_orlicz_sq, tail_probability

    mc = ctx.mc_for("lower_tail")
    fs = ctx.pick("lower_tail", lambda f: f.class_tag == F_PLUS, "class f_plus")
    bc = inequalities.constants(ctx.measure.rho, ctx.measure.kappa, ctx.rho_T())
    out = []
    for f in fs:
        osq = grad_orlicz_sq(f, ctx.measure, mc)
        if osq.value <= 0:
            continue
        for t in _T_GRID:
            tail = tail_probability(f, ctx.measure, t, "lower_centered", mc)
            bound = inequalities.lower_tail_bound(bc, osq.value, t)
            rhs = EstimateWithCI.exact(bound, count=osq.count, seed=mc.seed,
                                       tag="lower_tail_bound")
            out.append(one_sided_report(
                f"lower_tail[{f.name},t={t:g}]", tail, rhs,
                constants=bc.as_dict(),
                config={"t": t, "orlicz_sq": osq.value,
                        "n": ctx.measure.dimension},
            ))
    return out


def _check_variance_representation(ctx: RunContext):
    mc = ctx.mc_for("variance_representation")
    fs = ctx.pick("variance_representation", lambda f: f.smoothness == "c2",
                  "a C2 function")
    out = []
    for f in fs:
        rep = semigroup_representation("variance", f, ctx.measure, ctx.op, mc=mc)
        direct = estimate_moments(f, ctx.measure, mc).variance
        tol = 3.0 * float(np.hypot(rep.std_error, direct.std_error)) + 1e-9
        out.append(equality_report(
            f"variance_representation[{f.name}]", rep, direct, tolerance=tol,
            config={"n": ctx.measure.dimension},
        ))
    return out


def _check_entropy_representation(ctx: RunContext):
    mc = ctx.mc_for("entropy_representation")
    fs = ctx.pick("entropy_representation", lambda f: f.smoothness == "c2",
                  "a C2 function")
    out = []
    for f in fs:
        g = _exp_neg(f)
        rep = semigroup_representation("entropy", g, ctx.measure, ctx.op,
                                       T=ctx.rho_T(), mc=mc)
        direct = estimate_entropy(g, ctx.measure, mc)
        out.append(one_sided_report(
            f"entropy_representation[{f.name}]", direct, rep,
            config={"n": ctx.measure.dimension},
            notes=("truncated representation upper-bounds the entropy",),
        ))
    return out


def _check_covariance_identity(ctx: RunContext):
    if ctx.measure.family_tag != "gaussian":
        raise PreconditionError("covariance identity is Gaussian-only")
    mc = ctx.mc_for("covariance_identity")
    f = ctx.functions[0]
    g = ctx.functions[1] if len(ctx.functions) > 1 else ctx.functions[0]
    theta = 0.5
    return [upper_tail.covariance_identity_check(
        f, g, theta, mc, time_nodes=48,
        inner_order=16 if ctx.measure.dimension > 1 else None)]


def _check_dung_tail(ctx: RunContext):
    if ctx.measure.family_tag != "gaussian":
        raise PreconditionError("dung tail check is Gaussian-only")
    mc = ctx.mc_for("dung_tail")
    fs = ctx.pick("dung_tail", lambda f: f.class_tag == F_MINUS, "class f_minus")
    out = []
    for f in fs:
        out.extend(upper_tail.dung_tail_check(f, _T_GRID, mc,
                                              theta_grid=_THETA_GRID[:2]))
    return out


def _check_gamma_direction(ctx: RunContext):
    mc = ctx.mc_for("gamma_direction")
    fs = ctx.pick("gamma_direction", lambda f: f.class_tag == F_PLUS,
                  "class f_plus")
    return [inequalities.gamma_direction_check(f, ctx.measure, mc,
                                               T=ctx.rho_T())
            for f in fs]


def _check_scaling(ctx: RunContext, statistic: str):
    mc = ctx.mc_for(f"scaling_{statistic}")
    n_list = _SCALING_MAX_N if statistic == "max" else _SCALING_MEDIAN_N
    lo, hi = _SCALING_MAX_BAND if statistic == "max" else _SCALING_MEDIAN_BAND
    rows = extremes.scaling_experiment(statistic, n_list, mc)
    out = []
    for row in rows:
        est = EstimateWithCI.from_value_se(row.scaled, row.scaled_se, mc,
                                           mc.samples, "scaled_variance")
        out.append(_band_report(
            f"scaling_{statistic}[n={row.n}]", est, lo, hi,
            config={"n": row.n, "var_hat": row.var_hat,
                    "var_hat_se": row.var_hat_se, "scale": row.scale_name},
        ))
    return out


def _check_gumbel(ctx: RunContext):
    mc = ctx.mc_for("gumbel")
    fit = extremes.gumbel_fit(_GUMBEL_N, mc)
    ks = EstimateWithCI.exact(fit.ks_statistic, count=mc.samples, seed=mc.seed,
                              tag="ks_statistic")
    limit = EstimateWithCI.exact(_GUMBEL_KS_LIMIT, tag="ks_limit")
    r1 = one_sided_report(f"gumbel_ks[n={fit.n}]", ks, limit,
                          config={"n": fit.n, "samples": mc.samples})
    target = -np.log(np.log(2.0))
    med = EstimateWithCI.exact(fit.median, count=mc.samples, seed=mc.seed,
                               tag="renormalized_median")
    r2 = _band_report(f"gumbel_median[n={fit.n}]", med,
                      target - _GUMBEL_MEDIAN_TOL, target + _GUMBEL_MEDIAN_TOL,
                      config={"n": fit.n, "target": target})
    return [r1, r2]


CHECKS = {
    "harris": _check_harris,
    "kernel_harris": _check_kernel_harris,
    "poincare": _check_poincare,
    "logsob": _check_logsob,
    "hypercontractive": _check_hypercontractive,
    "entropy_decay": _check_entropy_decay,
    "thm2": _check_thm2,
    "gaussian_entropy_variance": _check_gaussian_entropy_variance,
    "herbst_mgf": _check_herbst_mgf,
    "lower_tail": _check_lower_tail,
    "variance_representation": _check_variance_representation,
    "entropy_representation": _check_entropy_representation,
    "covariance_identity": _check_covariance_identity,
    "dung_tail": _check_dung_tail,
    "gamma_direction": _check_gamma_direction,
    "scaling_max": lambda ctx: _check_scaling(ctx, "max"),
    "scaling_median": lambda ctx: _check_scaling(ctx, "median"),
    "gumbel": _check_gumbel,
}

DEFAULT_SUITE = [
    "harris", "kernel_harris", "poincare", "logsob", "hypercontractive",
    "entropy_decay", "thm2", "gaussian_entropy_variance", "herbst_mgf",
    "lower_tail", "variance_representation", "entropy_representation",
    "covariance_identity", "dung_tail", "scaling_max", "scaling_median",
    "gumbel",
]


def _worker_budget() -> int:
    env = os.environ.get("CONCLAB_WORKERS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def run(config_path: str, out=sys.stdout) -> int:
    """Execute the configured suite; returns the process exit code."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=out)
        return 1

    unknown = [name for name in cfg["suite"] if name not in CHECKS]
    if unknown:
        print(f"error: unknown checks {unknown}; known: {sorted(CHECKS)}",
              file=out)
        return 1

    try:
        ctx = RunContext(cfg)
    except Exception as exc:
        print(f"error: {exc}", file=out)
        return 1

    reports: list[InequalityReport] = []
    failed: str | None = None
    error: str | None = None
    budget = _worker_budget()
    with concurrent.futures.ThreadPoolExecutor(max_workers=budget) as pool:
        futures = {pool.submit(CHECKS[name], ctx): name for name in cfg["suite"]}
        for fut in concurrent.futures.as_completed(futures):
            name = futures[fut]
            try:
                reports.extend(fut.result())
            except Exception as exc:
                error = f"check {name!r}: {exc}"
                for other in futures:
                    other.cancel()
                break
            if any(r.verdict == "fail" for r in reports) and failed is None:
                failed = name
                for other in futures:
                    other.cancel()

    reports.sort(key=lambda r: (r.name, r.config.get("n", 0)))
    payload = {
        "config": cfg,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "summary": _summary(reports),
        "results": [r.to_json_dict() for r in reports],
    }

    output = cfg.get("output", {})
    json_path = output.get("json", "report.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = output.get("csv", "report.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_csv_text(reports))

    for r in reports:
        print(f"{r.verdict:12s} {r.name}  lhs={r.lhs.value:.6g} "
              f"rhs={r.rhs.value:.6g} margin={r.margin:.6g}", file=out)

    if error is not None:
        print(f"error: {error}", file=out)
        print(f"config echo: {json.dumps(cfg, sort_keys=True)}", file=out)
        return 1
    if failed is not None:
        bad = [r for r in reports if r.verdict == "fail"]
        print(f"FAIL: {len(bad)} report(s) failed (first in check {failed!r}); "
              f"suite halted", file=out)
        print(f"config echo: {json.dumps(cfg, sort_keys=True)}", file=out)
        return 1
    s = payload["summary"]
    print(f"{s['pass']} pass / {s['inconclusive']} inconclusive / "
          f"{s['fail']} fail", file=out)
    if s["inconclusive"]:
        return 2
    return 0


def _summary(reports) -> dict:
    return {
        "pass": sum(r.verdict == "pass" for r in reports),
        "inconclusive": sum(r.verdict == "inconclusive" for r in reports),
        "fail": sum(r.verdict == "fail" for r in reports),
    }


_CSV_FIELDS = ["name", "n", "lhs", "rhs", "margin", "verdict", "seed", "samples"]


def _csv_text(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    writer.writerow(_CSV_FIELDS)
    for r in reports:
        row = r.to_row()
        writer.writerow([
            row["name"],
            r.config.get("n", ""),
            repr(float(row["lhs"])),
            repr(float(row["rhs"])),
            repr(float(row["margin"])),
            row["verdict"],
            row["seed"],
            row["samples"],
        ])
    return buf.getvalue()


def render_report(report_path: str, fmt: str) -> str:
    """Deterministic rendering of a stored JSON report."""
    with open(report_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    results = sorted(payload["results"],
                     key=lambda r: (r["name"], r.get("config", {}).get("n", 0)))
    if fmt == "json":
        return json.dumps({"summary": payload["summary"], "results": results},
                          indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(_CSV_FIELDS)
        for r in results:
            writer.writerow([
                r["name"],
                r.get("config", {}).get("n", ""),
                repr(float(r["lhs"]["value"])),
                repr(float(r["rhs"]["value"])),
                repr(float(r["margin"])),
                r["verdict"],
                r["seed"],
                r["samples"],
            ])
        return buf.getvalue()
    if fmt == "markdown-summary":
        lines = ["| check | lhs | rhs | margin | verdict |",
                 "| --- | --- | --- | --- | --- |"]
        counts = {"pass": 0, "inconclusive": 0, "fail": 0}
        for r in results:
            counts[r["verdict"]] += 1
            lines.append(
                f"| {r['name']} | {r['lhs']['value']:.6g} | "
                f"{r['rhs']['value']:.6g} | {r['margin']:.6g} | {r['verdict']} |"
            )
        lines.append("")
        lines.append(f"{counts['pass']} pass / {counts['inconclusive']} "
                     f"inconclusive / {counts['fail']} fail")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="conclab",
                                     description="concentration-inequality lab")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a suite from a JSON config")
    p_run.add_argument("config")
    p_rep = sub.add_parser("report", help="render a stored report")
    p_rep.add_argument("report_file")
    p_rep.add_argument("--format", default="markdown-summary",
                       choices=["csv", "json", "markdown-summary"])
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    try:
        sys.stdout.write(render_report(args.report_file, args.format))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
