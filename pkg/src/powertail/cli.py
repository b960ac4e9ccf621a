"""Command-line interface.

Subcommands: xi, c0, orderstats, trimmed, norm, bound, simulate, calibrate,
verify, compare. Reports go to stdout (or ``--out``) as CSV with 17
significant digits, or as JSON with ``--json``. Exit status: 0 on success,
1 when a verification fails, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import jsonschema
import numpy as np

from . import streams
from .baselines import MomentTable, bcr_bound, berry_esseen_nonuniform, markov_envelope
from .certificates import DeviationCertificate, generate_coefficients
from .distributions import model_from_dict
from .errors import ConfigError, PowertailError
from .montecarlo import (
    SimulationPlan,
    calibrate,
    envelope_violations,
    simulate_linear_sum,
    tail_estimate,
    verify_certificate,
)
from .norms import (
    LP,
    Analytic,
    DirectMC,
    MonteCarlo,
    PoissonNormParams,
    Quadrature,
    RQParams,
    SignFormula,
    dual_norm_rq,
    poisson_hull_norm,
    primal_norm_rq,
)
from .orderstats import (
    EnvelopeParams,
    Glptj,
    ParetoClosed,
    Productiones,
    Quadrature as TrimQuadrature,
    Replacio,
    orderstat_envelope,
    trimmed_sum_bound,
)
from .special import c0_constant, xi_inverse, xi_inverse_bound

# ---------------------------------------------------------------------------
# config schema

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["standard_normal", "pareto_tail", "symmetric_power_law", "u_envelope",
                          "pure_pareto_h", "empirical", "rademacher"]},
        "p": _NUM,
        "q": _NUM,
        "exponent": _NUM,
        "values": {"type": "array", "items": _NUM, "minItems": 1},
        "interpolation": {"enum": ["midpoint", "step"]},
    },
    "additionalProperties": False,
}

PLAN_SCHEMA = {
    "type": "object",
    "required": ["seed", "replications"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "replications": _POS_INT,
        "chunk_size": _POS_INT,
        "worker_hint": _POS_INT,
    },
    "additionalProperties": False,
}

CERT_SCHEMA = {
    "type": "object",
    "required": ["kind", "q"],
    "properties": {
        "kind": {"enum": ["main", "special_direction", "all_directions", "special", "all"]},
        "q": _NUM,
        "c_dev": _NUM,
        "c_prob": _NUM,
        "iter_base": _NUM,
    },
    "additionalProperties": False,
}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "models": {"oneOf": [MODEL_SCHEMA, {"type": "array", "items": MODEL_SCHEMA, "minItems": 1}]},
        "coefficients": {"oneOf": [{"type": "string"}, {"type": "array", "items": _NUM, "minItems": 1}]},
        "plan": PLAN_SCHEMA,
        "certificate": CERT_SCHEMA,
        "t_grid": {"type": "array", "items": _NUM, "minItems": 1},
        "c_prob_target": _NUM,
        "thresholds": {"type": "array", "items": _NUM},
        "side": {"enum": ["two_sided", "upper"]},
        "verify_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "json": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

POISSON_SCHEMA = {
    "type": "object",
    "required": ["delta", "weights", "model"],
    "properties": {
        "delta": _NUM,
        "weights": {"type": "array", "items": _NUM, "minItems": 1},
        "model": MODEL_SCHEMA,
        "quantile_source": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["analytic", "monte_carlo"]}, "R": _POS_INT,
                           "seed": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "method": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["quadrature", "direct_mc"]}, "R2": _POS_INT,
                           "seed": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _validate(cfg, schema):
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {where}: {exc.message}") from None


def load_config(path: str, schema=RUN_SCHEMA) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc.msg}") from None
    _validate(cfg, schema)
    return cfg


def _need(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"config is missing key {k!r}")


def _models(cfg, n):
    spec = cfg["models"]
    if isinstance(spec, dict):
        return model_from_dict(spec)
    if len(spec) != n:
        raise ConfigError(f"key 'models' has {len(spec)} entries but there are {n} coefficients")
    return [model_from_dict(m) for m in spec]


def _coefficients(cfg, q=None):
    spec = cfg["coefficients"]
    if isinstance(spec, str):
        return generate_coefficients(spec, q), spec
    return np.asarray(spec, dtype=float), None


def _plan(cfg, args):
    p = dict(cfg["plan"])
    if getattr(args, "seed", None) is not None:
        p["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        p["replications"] = args.replications
    if getattr(args, "threads", None) is not None:
        p["worker_hint"] = args.threads
    return SimulationPlan(**p)


def _certificate(cfg):
    spec = dict(cfg["certificate"])
    a, gen = _coefficients(cfg, float(spec["q"]))
    if gen is not None:
        spec["generator"] = gen
    else:
        spec["a"] = a.tolist()
    return DeviationCertificate.from_dict(spec)


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _emit(args, columns, rows, extra=None):
    if args.json:
        doc = {"rows": [{c: _jsonable(r[c]) for c in columns} for r in rows]}
        if extra:
            doc.update(extra)
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = rows_to_csv(columns, rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_xi(args):
    ys = [float(y) for y in args.y]
    rows = [{"y": y, "inverse": float(xi_inverse(args.kind, y, args.tol)),
             "bound": float(xi_inverse_bound(args.kind, y))} for y in ys]
    _emit(args, ["y", "inverse", "bound"], rows)
    return 0


def cmd_c0(args):
    _emit(args, ["c0"], [{"c0": c0_constant(refine_tol=args.tol)}])
    return 0


def cmd_orderstats(args):
    params = EnvelopeParams(args.n, args.t)
    env = orderstat_envelope(params, closed_form=args.closed_form)
    if args.replications:
        seed = 0 if args.seed is None else args.seed
        plan = SimulationPlan(seed, args.replications, worker_hint=args.threads or 1)
        est = envelope_violations(env.combined, plan)
        row = {"n": args.n, "t": args.t, "budget": env.joint_probability, **est.to_dict()}
        cols = ["n", "t", "budget", "successes", "trials", "p_hat", "ci_low", "ci_high"]
        _emit(args, cols, [row])
        return 0
    cols = ["k", "top", "bottom", "renyi", "renyi_linear"]
    rows = [{"k": k + 1, "top": env.top[k], "bottom": env.bottom[k], "renyi": env.renyi[k],
             "renyi_linear": env.renyi_linear[k]} for k in range(args.n)]
    _emit(args, cols, rows, {"joint_probability": env.joint_probability,
                             "renyi_probability": env.renyi_probability})
    return 0


_VARIANTS = {
    "quadrature": lambda a: TrimQuadrature(),
    "replacio": lambda a: Replacio(),
    "productiones": lambda a: Productiones(a.growth_p, a.T),
    "pareto_closed": lambda a: ParetoClosed(a.C),
    "glptj": lambda a: Glptj(),
}


def cmd_trimmed(args):
    model = model_from_dict(json.loads(args.model))
    if args.variant == "productiones" and args.growth_p is None:
        raise ConfigError("key 'growth-p' is required for the productiones variant")
    k = args.n - 1 if args.k is None else args.k
    out = trimmed_sum_bound(model, args.n, args.j, k, args.lam, _VARIANTS[args.variant](args))
    if isinstance(out, tuple):
        row = {"variant": args.variant, "bound": out[0], "probability": out[1]}
    else:
        row = {"variant": args.variant, "bound": out, "probability": math.exp(-0.5 * args.lam**2)}
    _emit(args, ["variant", "bound", "probability"], [row])
    return 0


def cmd_norm(args):
    if args.config:
        cfg = load_config(args.config, POISSON_SCHEMA)
        src = cfg.get("quantile_source", {"kind": "analytic"})
        if src["kind"] == "analytic":
            source = Analytic()
        else:
            _need(src, "R", "seed")
            source = MonteCarlo(src["R"], src["seed"])
        params = PoissonNormParams(cfg["delta"], cfg["weights"], model_from_dict(cfg["model"]), source)
        m = cfg.get("method", {"kind": "quadrature"})
        if m["kind"] == "quadrature":
            method = Quadrature()
        else:
            _need(m, "R2", "seed")
            method = DirectMC(m["R2"], m["seed"], worker_hint=args.threads or 1)
        est = poisson_hull_norm(params, method, with_error=True)
        _emit(args, ["norm", "stderr"], [{"norm": est.value, "stderr": est.stderr}])
        return 0
    if args.x is None or args.r is None or args.q is None:
        raise ConfigError("norm needs --config or all of --x, --r, --q")
    x = np.array([float(v) for v in args.x.split(",")])
    params = RQParams(args.r, args.q, x.size)
    row = {"primal": primal_norm_rq(x, params, LP), "dual": dual_norm_rq(x, params),
           "dual_restricted": dual_norm_rq(x, params, restricted=True)}
    cols = ["primal", "dual", "dual_restricted"]
    if np.all(np.isin(np.abs(x), (0.0, 1.0))):
        row["sign_formula"] = primal_norm_rq(x, params, SignFormula)
        cols.append("sign_formula")
    _emit(args, cols, [row])
    return 0


def cmd_bound(args):
    a = generate_coefficients(args.coeff, args.q) if ":" in args.coeff else \
        np.array([float(v) for v in args.coeff.split(",")])
    cert = DeviationCertificate(args.kind, args.q, a, c_dev=args.cdev, c_prob=args.cprob)
    rows = [{"t": t, "bound": float(cert.bound_at(t)), "probability": float(cert.probability(t))}
            for t in args.t]
    _emit(args, ["t", "bound", "probability"], rows)
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config)
    _need(cfg, "coefficients", "models", "plan")
    a, _ = _coefficients(cfg)
    models = _models(cfg, a.size)
    plan = _plan(cfg, args)
    summary = simulate_linear_sum(models, a, plan)
    side = cfg.get("side", "two_sided")
    rows = []
    for thr in cfg.get("thresholds", []):
        e = tail_estimate(summary, thr, side)
        rows.append({"threshold": thr, **e.to_dict()})
    cols = ["threshold", "successes", "trials", "p_hat", "ci_low", "ci_high"]
    _emit(args, cols, rows, {"median": summary.median, "center": summary.center,
                             "plan": plan.to_dict()})
    if not args.json and not args.out:
        sys.stderr.write(f"median {_fmt(summary.median)} center {_fmt(summary.center)}\n")
    return 0


def cmd_calibrate(args):
    cfg = load_config(args.config)
    _need(cfg, "coefficients", "models", "plan", "certificate", "t_grid")
    cert = _certificate(cfg)
    models = _models(cfg, cert.n)
    plan = _plan(cfg, args)
    target = float(cfg.get("c_prob_target", cert.c_prob))
    res = calibrate(cert, models, plan, cfg["t_grid"], target)
    rows = [{"t": g.t, "threshold": g.threshold, **g.estimate.to_dict(),
             "budget": target * math.exp(-0.5 * g.t * g.t)} for g in res.grid]
    cols = ["t", "threshold", "successes", "trials", "p_hat", "ci_low", "ci_high", "budget"]
    calibrated = res.certificate(cert).to_dict()
    _emit(args, cols, rows, {"certificate": calibrated, "feasible": res.feasible})
    if args.emit_config:
        out = {k: v for k, v in cfg.items() if k != "output"}
        out["certificate"] = {k: calibrated[k] for k in ("kind", "q", "c_dev", "c_prob", "iter_base")
                              if k in calibrated}
        out["plan"] = dict(plan.to_dict(), seed=streams.derive_seed(plan.seed, streams.VERIFY))
        out.pop("c_prob_target", None)
        with open(args.emit_config, "w") as fh:
            json.dump(out, fh, indent=2)
    return 0 if res.feasible else 1


def cmd_verify(args):
    cfg = load_config(args.config)
    _need(cfg, "coefficients", "models", "plan", "certificate", "t_grid")
    cert = _certificate(cfg)
    if args.cdev is not None:
        cert = cert.with_constants(c_dev=args.cdev)
    models = _models(cfg, cert.n)
    plan = _plan(cfg, args)
    if "verify_seed" in cfg and args.seed is None:
        plan = plan.with_seed(cfg["verify_seed"])
    report = verify_certificate(cert, models, plan, cfg["t_grid"])
    text = report.to_json() + "\n" if args.json else report.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if report.passed else 1


def cmd_compare(args):
    cfg = load_config(args.config)
    _need(cfg, "coefficients", "models", "plan", "certificate", "t_grid")
    cert = _certificate(cfg)
    models = _models(cfg, cert.n)
    plan = _plan(cfg, args)
    summary = simulate_linear_sum(models, cert.a, plan)
    single = cert.n == 1 or np.count_nonzero(cert.a) == 1
    base = models if not isinstance(models, list) else models[int(np.flatnonzero(cert.a)[0])]
    table = MomentTable(base) if single and math.isfinite(base.tail_exponent) else None
    scale = float(np.max(np.abs(cert.a)))
    samples = summary.sorted_values
    rows = []
    for t in cfg["t_grid"]:
        thr = float(cert.bound_at(t))
        est = tail_estimate(summary, thr)
        if single:
            x = thr / scale
            a0, c = float(cert.a[np.flatnonzero(cert.a)[0]]), summary.center
            hi, lo = sorted(((c + thr) / a0, (c - thr) / a0))[::-1]
            exact = float(1.0 - base.cdf(hi) + base.cdf(lo))
            markov = markov_envelope(table, x) if table is not None and x > 1 else 1.0
        else:
            exact = est.p_hat
            markov = _empirical_markov(samples, summary.center, thr, base_exponent(models))
        alpha = base_exponent(models)
        m2 = float(np.mean((samples - summary.center) ** 2)) if samples is not None else math.nan
        sd = math.sqrt(m2) if m2 > 0 else math.nan
        be = berry_esseen_nonuniform(3.0, np.count_nonzero(cert.a), thr / sd, 1.0, 1.0) \
            if math.isfinite(sd) else math.nan
        n_eff = int(np.count_nonzero(cert.a))
        tt = thr / n_eff ** (1.0 / alpha) if math.isfinite(alpha) else math.nan
        bcr = bcr_bound(alpha, n_eff, tt)[1] if math.isfinite(tt) and tt > math.e else math.nan
        rows.append({"t": t, "threshold": thr, "tail": exact, "mc_tail": est.p_hat,
                     "certificate": cert.probability(t), "markov": markov,
                     "berry_esseen": be, "bcr": bcr})
    cols = ["t", "threshold", "tail", "mc_tail", "certificate", "markov", "berry_esseen", "bcr"]
    _emit(args, cols, rows)
    return 0


def base_exponent(models) -> float:
    ms = models if isinstance(models, list) else [models]
    return float(min(m.tail_exponent for m in ms))


def _empirical_markov(samples, center, thr, alpha):
    if samples is None:
        return math.nan
    dev = np.abs(samples - center)
    top = alpha if math.isfinite(alpha) else 64.0
    best = 1.0
    for p in np.linspace(2.0, top, 64, endpoint=False):
        best = min(best, float(np.mean(dev**p)) / thr**p)
    return best


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit JSON instead of CSV")
    common.add_argument("--out", help="write the report to this path")
    common.add_argument("--seed", type=int, help="override the seed of the run")
    common.add_argument("--replications", type=int, help="override the replication count")
    common.add_argument("--threads", type=int, help="worker thread hint (never changes results)")

    p = argparse.ArgumentParser(prog="powertail", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("xi", parents=[common], help="inverses of the two xi functions")
    s.add_argument("--kind", required=True, choices=["xi1", "xi2"])
    s.add_argument("--y", required=True, nargs="+")
    s.add_argument("--tol", type=float, default=1e-12)
    s.set_defaults(func=cmd_xi)

    s = sub.add_parser("c0", parents=[common], help="the constant C_0")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_c0)

    s = sub.add_parser("orderstats", parents=[common], help="order-statistic envelopes")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--closed-form", action="store_true")
    s.set_defaults(func=cmd_orderstats)

    s = sub.add_parser("trimmed", parents=[common], help="trimmed-sum bounds")
    s.add_argument("--model", required=True, help='model JSON, e.g. \'{"kind": "pareto_tail", "p": 3}\'')
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--j", type=int, default=0)
    s.add_argument("--k", type=int)
    s.add_argument("--lam", type=float, required=True)
    s.add_argument("--variant", choices=sorted(_VARIANTS), default="quadrature")
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--growth-p", type=float)
    s.set_defaults(func=cmd_trimmed)

    s = sub.add_parser("norm", parents=[common], help="E_{r,q} and Poisson-hull norms")
    s.add_argument("--config", help="Poisson-hull norm config (JSON)")
    s.add_argument("--x", help="comma-separated vector for the E_{r,q} norm")
    s.add_argument("--r", type=float)
    s.add_argument("--q", type=float)
    s.set_defaults(func=cmd_norm)

    s = sub.add_parser("bound", parents=[common], help="evaluate a deviation certificate")
    s.add_argument("--kind", required=True, choices=["main", "special_direction", "all_directions"])
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--coeff", required=True, help="generator tag (unit:n, critical:n, ...) or a comma list")
    s.add_argument("--t", type=float, required=True, nargs="+")
    s.add_argument("--cdev", type=float, default=1.0)
    s.add_argument("--cprob", type=float, default=1.0)
    s.set_defaults(func=cmd_bound)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "simulate a linear sum and estimate tails"),
        ("calibrate", cmd_calibrate, "calibrate certificate constants"),
        ("verify", cmd_verify, "verify a certificate on fresh samples"),
        ("compare", cmd_compare, "compare the certificate with baseline bounds"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--config", required=True)
        s.set_defaults(func=func)
        if name == "calibrate":
            s.add_argument("--emit-config", help="write a verify config with the calibrated constants")
        if name == "verify":
            s.add_argument("--cdev", type=float, help="override c_dev (e.g. 0 to force failure)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except (ConfigError, PowertailError, ValueError) as exc:
        sys.stderr.write(f"powertail {args.command}: error: {exc}\n")
        return 2


def run(argv=None) -> int:
    """Entry point returning the exit code instead of raising SystemExit."""
    try:
        return main(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
