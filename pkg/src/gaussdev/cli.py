"""Command-line driver: runs the verification suites and writes JSON/CSV reports.

Every subcommand writes ``<out>/<subcommand>.json`` with the layout
``{manifest, checks: [{name, paper_ref, inputs, estimate, se, bound, margin, verdict}]}``.
The exit code is 0 when every check passes, 1 when any fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .convex_analysis import concavity_test
from .deviation import (
    check_bound,
    layer_cake_check,
    phi_curve,
    phi_lower_bound_check,
    psi_lower_bound_check,
    tail_estimate,
)
from .ehrhard import ConvexBody, ehrhard_check, kwapien_check, random_interval_pair, random_polygon_pair
from .errors import ConfigurationError, ContractError, DomainError, GaussDevError
from .functions import (
    CATALOG_LABELS,
    CONVEX_LABELS,
    SEMICONVEX_1D_LABELS,
    catalog_function,
    pointwise_bound_check,
)
from .gauss_core import MonteCarlo, Quadrature, RandomStream, phi_inv
from .ou_semigroup import (
    ExpOf,
    SemigroupConfig,
    hypercontractivity_check,
    log_hessian_lower_bound_check,
    ou_values,
)
from .transport import (
    QuantileGrid,
    build_cdf,
    build_transport_map,
    counterexample_analysis,
    kappa_divergence_witness,
    resampled_tail,
    transport_semiconvexity,
)

# Statement each check exercises, stored in the ``paper_ref`` field of a report.
STATEMENTS = {
    "theorem1": "gamma_n(f >= t) <= Phibar(sqrt(2t)) for convex f with int e^f dgamma_n = 1",
    "dim1": "gamma_1(f >= t) <= (1+beta) e^{-t} / sqrt(2t) for beta-semiconvex normalised f, t >= 1",
    "pointwise": "f(x) <= (n/2) log(1+beta) + |x|^2/2 for beta-semiconvex normalised f",
    "phi_concavity": "s -> Phi^{-1}(gamma_n(f <= s)) is concave for convex f",
    "phi_lower_bound": "Phi^{-1}(gamma_n(f <= s)) >= sqrt(2s) for convex normalised f",
    "psi_lower_bound": "sup_u (u t + phi(u)) >= -1/(2t) for t < 0",
    "layer_cake": "int e^u gamma_n(f > u) du = int e^f dgamma_n = 1",
    "log_hessian_lower_bound": "Hess log P_s g >= -Id/(2s) for positive g",
    "hypercontractivity": "||P_t g||_q <= ||g||_p with q = 1 + (p-1) e^{2t}",
    "ou_eval": "P_t g(x) = E g(e^{-t} x + sqrt(1 - e^{-2t}) Y)",
    "transport_semiconvexity": "the monotone rearrangement T_f of a convex f has no negative curvature",
    "transport_tail": "T_f pushes gamma_1 forward to the law of f",
    "counterexample_analysis": "F_f has infinite right derivative at a non-global local minimum value",
    "kappa_divergence": "T_f is not lambda-semiconvex for any lambda near such a level",
    "ehrhard": "Phi^{-1}(gamma(lam A + (1-lam) B)) >= lam Phi^{-1}(gamma(A)) + (1-lam) Phi^{-1}(gamma(B))",
    "kwapien": "median(f) <= mean(f) for convex f",
}

REPORT_KEYS = ("name", "paper_ref", "inputs", "estimate", "se", "bound", "margin", "verdict")


def _check(entry: dict) -> dict:
    """Order the schema keys first; extra diagnostic keys follow."""
    name = entry["name"]
    out = {k: entry.get(k) for k in REPORT_KEYS}
    out["paper_ref"] = STATEMENTS.get(name, "")
    for k, v in entry.items():
        if k not in out:
            out[k] = v
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _labels(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


# ---------------------------------------------------------------------------
# Suites.  Each returns (checks, csv header, csv rows).


def run_theorem1(args):
    checks, rows = [], []
    labels = args.function or CONVEX_LABELS
    levels = args.levels or [0.25, 0.5, 1.0, 2.0, 4.0]
    for i, label in enumerate(labels):
        f = catalog_function(label)
        for r in check_bound(f, "theorem1", levels, args.samples, RandomStream(args.seed, i), workers=args.workers):
            checks.append(_check(r.to_json()))
            rows.append([label, r.level, r.estimate.p_hat, r.estimate.se, r.bound_value])
    return checks, ["function", "level", "estimate", "se", "bound"], rows


def run_dim1(args):
    checks, rows = [], []
    labels = args.function or SEMICONVEX_1D_LABELS
    levels = args.levels or [1.0, 2.0, 4.0]
    for i, label in enumerate(labels):
        f = catalog_function(label)
        for r in check_bound(f, "dim1", levels, args.samples, RandomStream(args.seed, i), workers=args.workers):
            checks.append(_check(r.to_json()))
            rows.append([label, r.level, r.estimate.p_hat, r.estimate.se, r.bound_value])
    return checks, ["function", "level", "estimate", "se", "bound"], rows


def run_lemma(args):
    checks, rows = [], []
    for label in args.function or CONVEX_LABELS + SEMICONVEX_1D_LABELS:
        r = pointwise_bound_check(catalog_function(label))
        checks.append(_check({
            "name": "pointwise", "function": label,
            "inputs": {"grid": "axes and diagonals of [-6, 6]^n, 2001 points each"},
            "estimate": r.max_violation, "se": 0.0, "bound": r.tolerance,
            "margin": r.tolerance - r.max_violation, "verdict": r.verdict, "argmax": r.argmax,
        }))
        rows.append([label, r.max_violation, r.tolerance])
    return checks, ["function", "max_violation", "tolerance"], rows


def run_phi_curve(args):
    checks, rows = [], []
    for i, label in enumerate(args.function or CONVEX_LABELS):
        f = catalog_function(label)
        curve = phi_curve(f, K=32, count=args.samples, stream=RandomStream(args.seed, i), workers=args.workers)
        conc = concavity_test(curve.grid(), curve.ses)
        inputs = {"K": 32, "count": args.samples}
        checks.append(_check({
            "name": "phi_concavity", "function": label, "inputs": inputs,
            "estimate": conc.max_z, "se": 1.0, "bound": 3.0, "margin": 3.0 - conc.max_z,
            "verdict": conc.verdict,
        }))
        for c in (phi_lower_bound_check(curve), psi_lower_bound_check(curve), layer_cake_check(f, curve)):
            d = c.to_json()
            checks.append(_check({
                **d, "function": label, "inputs": inputs,
                "estimate": d.get("integral"), "se": d.get("se"),
                "bound": 1.0 if c.name == "layer_cake" else None,
            }))
        rows.extend([label, s, p, e] for s, p, e in curve.to_rows())
    return checks, ["function", "s", "phi", "se"], rows


def _ou_config(args, t: float) -> SemigroupConfig:
    return SemigroupConfig(t, Quadrature(min(args.quadrature_order, 128)))


def run_ou_eval(args):
    checks, rows = [], []
    points = args.points or list(np.linspace(-3, 3, 13))
    for label in args.function or ["quad_a0.25"]:
        g = ExpOf(catalog_function(label))
        X = np.repeat(np.asarray(points, dtype=float)[:, None], g.n, axis=1)
        res = ou_values(g, X, _ou_config(args, args.time))
        ok = bool(np.all(np.isfinite(res.values)))
        err = float(np.max(res.error))
        checks.append(_check({
            "name": "ou_eval", "function": g.label,
            "inputs": {"t": args.time, "points": points, "order": args.quadrature_order},
            "estimate": res.values, "se": err, "bound": None, "margin": None,
            "verdict": "PASS" if ok else "FAIL",
        }))
        rows.extend([g.label, x, v] for x, v in zip(points, res.values.tolist()))
    return checks, ["function", "x", "P_t g"], rows


def run_ou_certify(args):
    checks, rows = [], []
    for label in args.function or ["quad_a0.25", "logcosh", "logcosh_n2", "exp_pushforward_a0.5"]:
        g = ExpOf(catalog_function(label))
        for s in args.levels or [0.1, 0.5, 1.0]:
            r = log_hessian_lower_bound_check(g, s, cfg=_ou_config(args, s))
            checks.append(_check({**r.to_json(), "se": r.tolerance}))
            rows.append([g.label, s, r.min_eigenvalue, r.threshold])
    return checks, ["function", "s", "min_eigenvalue", "threshold"], rows


def run_hypercontractivity(args):
    checks, rows = [], []
    for label in args.function or ["quad_a0.25", "logcosh", "sharp_t1"]:
        g = ExpOf(catalog_function(label))
        for t in args.levels or [0.1, 0.5]:
            r = hypercontractivity_check(g, args.p, t, cfg=_ou_config(args, t))
            checks.append(_check({**r.to_json(), "se": 0.0}))
            rows.append([g.label, t, r.lhs, r.rhs])
    return checks, ["function", "t", "lhs", "rhs"], rows


def run_transport(args):
    checks, rows = [], []
    for i, label in enumerate(args.function or ["logcosh", "sharp_t1", "quad_a0.25"]):
        f = catalog_function(label)
        stream = RandomStream(args.seed, 2 * i)
        method = QuantileGrid(args.samples) if f.n == 1 else MonteCarlo(args.samples, stream)
        cdf = build_cdf(f, method)
        # keep at least ~20 atoms beyond the grid ends
        tmap = build_transport_map(cdf, u_max=min(4.0, math.floor(10 * float(phi_inv(1 - 20 / cdf.size))) / 10))
        est = transport_semiconvexity(tmap)
        checks.append(_check({
            "name": "transport_semiconvexity", "function": label,
            "inputs": {"method": cdf.method, "atoms": cdf.size, "window": list(est.window)},
            "estimate": est.kappa, "se": est.noise_floor / 3.0, "bound": est.noise_floor,
            "margin": est.noise_floor - est.kappa if est.within_noise else -est.excess,
            "verdict": "PASS" if est.within_noise else "FAIL", "excess": est.excess, "argmin": est.argmin,
        }))
        levels = args.levels or np.quantile(cdf.atoms, [0.5, 0.7, 0.9, 0.97, 0.995]).tolist()
        for k, t in enumerate(levels):
            a = resampled_tail(tmap, t, args.samples, RandomStream(args.seed, 2 * i + 1).child(k))
            b = tail_estimate(f, t, args.samples, RandomStream(args.seed, 2 * i + 1).child(1000 + k),
                              workers=args.workers)
            se = math.hypot(a.se, b.se)
            diff = abs(a.p_hat - b.p_hat)
            checks.append(_check({
                "name": "transport_tail", "function": label, "inputs": {"level": t, "count": args.samples},
                "estimate": a.p_hat, "se": se, "bound": b.p_hat, "margin": 3 * se - diff,
                "verdict": "PASS" if diff <= 3 * se else "FAIL",
            }))
        rows.extend([label, u, T] for u, T in tmap.to_rows())
    return checks, ["function", "u", "T"], rows


def run_counterexample(args):
    f = catalog_function("quartic")
    a = counterexample_analysis(f)
    checks = [_check({**a.to_json(), "se": None, "bound": [-0.7, -0.3],
                      "margin": min(a.exponent + 0.7, -0.3 - a.exponent)})]
    rows = [[h, qp, qm] for h, qp, qm in zip(a.steps, a.q_plus, a.q_minus)]
    for w in kappa_divergence_witness(f, [0.0, 1.0, 10.0]):
        checks.append(_check({
            "name": "kappa_divergence", "function": f.label, "inputs": {"lambda": w.lam},
            "estimate": w.excess, "se": w.noise, "bound": 3 * w.noise, "margin": w.excess - 3 * w.noise,
            "verdict": "PASS" if w.verdict == "VIOLATION" else "FAIL", "outcome": w.verdict, "triple": w.triple,
        }))
    return checks, ["h", "q_plus", "q_minus"], rows


def _body(text: str) -> ConvexBody:
    try:
        return ConvexBody.from_json(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"body is not valid JSON: {exc}") from None


def run_ehrhard(args):
    lambdas = args.levels or [0.1, 0.25, 0.5, 0.75, 0.9]
    if args.body_a or args.body_b:
        if not (args.body_a and args.body_b):
            raise ConfigurationError("--body-a and --body-b must be given together")
        pairs = [(_body(args.body_a), _body(args.body_b))]
    else:
        rng = np.random.default_rng(args.seed)
        pairs = [random_interval_pair(rng) for _ in range(100)] + [random_polygon_pair(rng) for _ in range(25)]
    checks, rows = [], []
    for i, (A, B) in enumerate(pairs):
        method = None if args.method == "quadrature" else MonteCarlo(args.samples, RandomStream(args.seed, i))
        r = ehrhard_check(A, B, lambdas, method)
        d = r.to_json()
        checks.append(_check({**d, "inputs": {**d["inputs"], "A": A.to_json(), "B": B.to_json()}}))
        rows.extend([i, lam, s, e] for lam, s, e in zip(r.lambdas, r.slacks, r.ses))
    return checks, ["pair", "lambda", "slack", "se"], rows


def run_kwapien(args):
    checks, rows = [], []
    for i, label in enumerate(args.function or CONVEX_LABELS):
        r = kwapien_check(catalog_function(label), args.samples, RandomStream(args.seed, i), args.workers)
        checks.append(_check(r.to_json()))
        rows.append([label, r.median, r.median_se, r.mean, r.mean_se])
    return checks, ["function", "median", "median_se", "mean", "mean_se"], rows


SUITES: dict[str, Callable] = {
    "verify-theorem1": run_theorem1,
    "verify-dim1": run_dim1,
    "verify-lemma-foot": run_lemma,
    "phi-curve": run_phi_curve,
    "ou-eval": run_ou_eval,
    "ou-certify": run_ou_certify,
    "hypercontractivity": run_hypercontractivity,
    "transport-analyze": run_transport,
    "counterexample": run_counterexample,
    "ehrhard-check": run_ehrhard,
    "kwapien": run_kwapien,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--function", type=_labels, help="comma-separated catalog labels (default: suite set)")
    common.add_argument("--levels", type=_floats, help="comma-separated levels (or s, t, lambda values)")
    common.add_argument("--samples", type=int, default=10**6, help="Monte Carlo sample count")
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--quadrature-order", type=int, default=48)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", type=Path, default=Path("reports"), help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json",
                        help="csv also writes the plot data next to the JSON report")

    parser = argparse.ArgumentParser(prog="gaussdev", description="Gaussian deviation inequality checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in list(SUITES) + ["all"]:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} suite")
        if name in ("ou-eval", "all"):
            p.add_argument("--time", type=float, default=0.5, help="semigroup time t")
            p.add_argument("--points", type=_floats, help="evaluation points (repeated across coordinates)")
        if name in ("hypercontractivity", "all"):
            p.add_argument("--p", type=float, default=2.0, help="exponent p > 1")
        if name in ("ehrhard-check", "all"):
            p.add_argument("--body-a", help='JSON body, e.g. {"dim": 1, "interval": [-1, 1]}')
            p.add_argument("--body-b")
            p.add_argument("--method", choices=("quadrature", "monte_carlo"), default="quadrature")
    sub.add_parser("catalog", help="list catalog function labels")
    return parser


def _manifest(args, command: str, outputs: list[str]) -> dict:
    return {
        "subcommand": command,
        "functions": args.function,
        "levels": args.levels,
        "samples": args.samples,
        "seed": args.seed,
        "quadrature_order": args.quadrature_order,
        "outputs": outputs,
        "version": __version__,
    }


def _write(args, command: str, checks: list, header: list, rows: list) -> tuple[Path, bool]:
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{command}.json"
    outputs = [str(path)]
    if args.format == "csv":
        csv_path = args.out / f"{command}.csv"
        outputs.append(str(csv_path))
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(_jsonable(rows))
    report = {"manifest": _manifest(args, command, outputs), "checks": checks}
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=False) + "\n")
    return path, all(c["verdict"] == "PASS" for c in checks)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "catalog":
        for label in CATALOG_LABELS:
            f = catalog_function(label)
            print(f"{label}\tn={f.n}\tbeta={f.beta:g}\tconvex={f.convex}")
        return 0
    if args.samples < 1000:
        print("--samples must be at least 1000", file=sys.stderr)
        return 2
    commands = list(SUITES) if args.command == "all" else [args.command]
    if args.command != "all":
        for attr, default in (("time", 0.5), ("points", None), ("p", 2.0), ("body_a", None),
                              ("body_b", None), ("method", "quadrature")):
            if not hasattr(args, attr):
                setattr(args, attr, default)
    failed = []
    for command in commands:
        try:
            checks, header, rows = SUITES[command](args)
        except (ConfigurationError, ContractError, DomainError) as exc:
            print(f"{command}: {exc}", file=sys.stderr)
            return 2
        except GaussDevError as exc:
            print(f"{command}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        path, ok = _write(args, command, checks, header, rows)
        n_pass = sum(c["verdict"] == "PASS" for c in checks)
        print(f"{command}: {n_pass}/{len(checks)} PASS -> {path}")
        if not ok:
            failed.append(path)
    for path in failed:
        print(f"FAIL: see {path}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
