"""Command-line front end: ``mfglauber {critical,verify,mix,couple,simulate}``.

Every numeric flag accepts a small arithmetic expression that may refer to
the model's critical values, e.g. ``--beta 0.9*beta_s`` or ``--K 0.8*kc2``.
Outputs carry the tool version and a hash of the resolved configuration.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import io
import json
import math
import operator
import sys
import warnings
from typing import Callable, Optional

import numpy as np

from mfglauber import __version__
from mfglauber import equilibrium as eq
from mfglauber.apc_verify import check_condition_local, check_condition_rs, check_condition_uniform
from mfglauber.coupling import (
    bc_rapid_bound,
    coupling_time_mc,
    equilibrium_sampler,
)
from mfglauber.equilibrium import MultiPhaseError, OutOfRegimeWarning
from mfglauber.glauber import (
    StateSpaceTooLarge,
    lumped_chain_build,
    simulate_chain,
)
from mfglauber.mixing_lab import (
    fit_growth,
    mixing_profile,
    spectral_gap,
    t_mix_exact,
)
from mfglauber.model_core import ModelSpec
from mfglauber.shuffle import shuffle_coupling_times

EXIT_REFUSED = 2
WORST_CASE_LIMIT = 1000

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_FUNCS = {"log": math.log, "exp": math.exp, "sqrt": math.sqrt}


class CLIError(Exception):
    pass


class Refusal(Exception):
    """The command declines to run; exits with code 2."""


def evaluate(expr, names: dict[str, Callable[[], float]]) -> float:
    """Evaluate an arithmetic expression; names resolve lazily via callables."""
    if isinstance(expr, (int, float)):
        return float(expr)
    tree = ast.parse(str(expr).strip(), mode="eval")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name):
            if node.id in ("pi", "e"):
                return getattr(math, node.id)
            if node.id in names:
                return float(names[node.id]())
            raise CLIError(f"unknown name {node.id!r} in {expr!r}")
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise CLIError(f"unsupported expression {expr!r}")

    return float(ev(tree))


def _split(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [v for v in str(value).split(",") if v.strip()]


def _gcwp_names(q, r):
    return {
        "beta_s": lambda: eq.beta_s(q, r),
        "beta_c": lambda: eq.beta_c_gcwp(q, r),
    }


def _bc_names(beta):
    def quiet_kc2():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfRegimeWarning)
            return eq.kc2(beta)
    return {"kc2": quiet_kc2, "k1": lambda: eq.k1(beta), "kc1": lambda: eq.kc1(beta)}


def resolve_model(args) -> ModelSpec:
    fam = args.model
    if fam == "bc":
        if args.beta is None or args.K is None:
            raise CLIError("--model bc needs --beta and --K")
        beta = evaluate(args.beta, {})
        K = evaluate(args.K, _bc_names(beta))
        return ModelSpec.blume_capel(K, beta)
    if fam in ("cwp", "gcwp"):
        q = int(args.q)
        r = 2.0 if fam == "cwp" else float(args.r)
        if args.beta is None:
            raise CLIError(f"--model {fam} needs --beta")
        beta = evaluate(args.beta, _gcwp_names(q, r))
        return ModelSpec.cwp(q, beta) if fam == "cwp" else ModelSpec.gcwp(q, r, beta)
    raise CLIError(f"--model {fam} is not supported here")


def model_dict(m: ModelSpec) -> dict:
    out = {"family": m.family, "beta": m.beta, "q": m.q}
    if m.family == "gcwp":
        out["r"] = m.r
    if m.family == "bc":
        out["K"] = m.K
    return out


# ---------------------------------------------------------------------------
# output


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def render_json(payload: dict, cfg: dict) -> str:
    doc = {"tool": "mfglauber", "version": __version__, "config_hash": config_hash(cfg),
           "config": cfg, **payload}
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def render_csv(header, rows, cfg: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# mfglauber {__version__} config={config_hash(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else _fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _sibling(path: Optional[str], suffix: str) -> Optional[str]:
    if not path:
        return None
    stem = path.rsplit(".", 1)[0] if "." in path.rsplit("/", 1)[-1] else path
    return stem + suffix


def _base_cfg(args) -> dict:
    keys = ("command", "model", "q", "r", "beta", "K", "n", "eps", "mesh", "seed",
            "replicas", "max_steps", "start", "steps", "stride", "profiles")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# ---------------------------------------------------------------------------
# commands


def cmd_critical(args) -> int:
    cfg = _base_cfg(args)
    rows = []
    if args.model == "bc":
        header = ["beta", "kc2", "k1", "kc1", "wc", "kc2_identity_residual",
                  "k1_residual", "kc1_residual", "error"]
        for b in _split(args.beta):
            beta = evaluate(b, {})
            try:
                cv = eq.critical_values_bc(beta)
                res = cv.residuals
                rows.append([beta, cv.kc2, cv.k1, cv.kc1, cv.wc, res.get("kc2_identity"),
                             max(res["k1_G1"], res["k1_G2"]) if "k1_G1" in res else None,
                             res.get("kc1_depth"), None])
            except Exception as exc:  # reported per row, the sweep continues
                rows.append([beta, None, None, None, None, None, None, None, str(exc)])
    elif args.model in ("cwp", "gcwp"):
        header = ["q", "r", "beta_c", "beta_s", "beta_c_bracket", "beta_s_bracket",
                  "local_limit_at_beta_s", "error"]
        qs = [int(v) for v in _split(args.q)]
        rs = [2.0] if args.model == "cwp" else [float(v) for v in _split(args.r)]
        for q in qs:
            for r in rs:
                try:
                    cv = eq.critical_values_gcwp(q, r)
                    rows.append([q, r, cv.beta_c, cv.beta_s, cv.residuals["beta_c_bracket"],
                                 cv.residuals["beta_s_bracket"],
                                 eq.local_contraction_limit(q, r, cv.beta_s), None])
                except Exception as exc:
                    rows.append([q, r, None, None, None, None, None, str(exc)])
    else:
        raise CLIError("critical supports --model bc, cwp or gcwp")
    emit(render_csv(header, rows, cfg), args.out)
    return 0


def cmd_verify(args) -> int:
    m = resolve_model(args)
    if not m.separable:
        raise CLIError("verify works on cwp/gcwp models")
    cfg = _base_cfg(args)
    cfg["resolved_model"] = model_dict(m)
    try:
        u = check_condition_uniform(m, args.mesh)
    except MultiPhaseError as exc:
        wit = [np.asarray(z).tolist() for z in exc.minimizers]
        raise Refusal(f"{m.label()} is multi-phase; equilibrium macrostates: {wit}")
    rs = check_condition_rs(m, args.eps, args.mesh, delta_hat=u.extra["delta_hat"])
    loc = check_condition_local(m, seed=0)
    reports = [u, rs, loc]
    overall = all(rep.holds for rep in reports)
    payload = {
        "reports": [rep.to_dict() for rep in reports],
        "verdict": "rapid-mixing conditions hold" if overall else "rapid-mixing conditions fail",
    }
    emit(render_json(payload, cfg), args.out)
    return 0


def _theory_bound(m: ModelSpec, n: int, eps: float):
    if m.family != "bc":
        return None
    try:
        return bc_rapid_bound(m.beta, m.K, n, eps)
    except ValueError:
        return None


def cmd_mix(args) -> int:
    m = resolve_model(args)
    cfg = _base_cfg(args)
    cfg["resolved_model"] = model_dict(m)
    eps = args.eps
    rows, ns, ts = [], [], []
    for n in [int(v) for v in _split(args.n)]:
        try:
            chain = lumped_chain_build(m, n)
        except StateSpaceTooLarge as exc:
            rows.append([n, None, None, None, None, None, f"skipped: {exc}"])
            continue
        t, approx = t_mix_exact(chain, eps)
        gap = spectral_gap(chain)
        if args.profiles:
            prof = mixing_profile(chain, eps_list=(eps,), dbar_every=args.profiles)
            prows = [[int(tt), float(d), None if np.isnan(db) else float(db)]
                     for tt, d, db in zip(prof.t, prof.d, prof.dbar)]
            emit(render_csv(["t", "d", "dbar"], prows, cfg),
                 _sibling(args.out, f".n{n}.profile.csv") or f"profile_n{n}.csv")
        bound = _theory_bound(m, n, eps)
        rows.append([n, chain.size, t, gap, bound,
                     None if bound is None else int(t <= bound),
                     "approximate starts" if approx else None])
        ns.append(n)
        ts.append(t)
    header = ["n", "states", "t_mix", "spectral_gap", "theory_bound", "within_bound", "note"]
    emit(render_csv(header, rows, cfg), args.out)
    summary = {"n": ns, "t_mix": ts, "eps": eps}
    if len(ns) >= 2:
        summary["fit"] = fit_growth(ns, ts)
        summary["classification"] = summary["fit"]["classification"]
    else:
        summary["classification"] = None
    js = render_json(summary, cfg)
    side = _sibling(args.out, ".summary.json")
    if side:
        emit(js, side)
    else:
        sys.stdout.write(js)
    return 0


def _require_seed(args):
    if args.seed is None:
        raise Refusal("randomised commands need an explicit --seed")


def cmd_couple(args) -> int:
    _require_seed(args)
    cfg = _base_cfg(args)
    n = int(args.n)
    if args.model == "shuffle":
        tau, cens = shuffle_coupling_times(n, args.seed, args.replicas, args.max_steps)
        from mfglauber.coupling import CouplingTimes
        ct = CouplingTimes(tau, cens, args.max_steps)
        summary = {"quantiles": ct.quantiles(), "mean": float(tau.mean()),
                   "reference_2nlogn": 2 * n * math.log(n), "censored": int(cens.sum())}
    else:
        m = resolve_model(args)
        cfg["resolved_model"] = model_dict(m)
        x0 = np.zeros(n, dtype=int)
        y0 = np.full(n, m.q - 1, dtype=int)
        chain = None
        try:
            chain = lumped_chain_build(m, n)
        except StateSpaceTooLarge:
            pass
        sampler = None
        if args.start == "equilibrium-vs-corner":
            if chain is None:
                raise CLIError("equilibrium starts need a lumped chain within the size cap")
            sampler = equilibrium_sampler(chain)
        elif args.start != "corners":
            y0 = np.array([int(v) for v in _split(args.start)])
            if len(y0) != n:
                raise CLIError("explicit start must list n spin labels")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            ct = coupling_time_mc(m, x0, y0, args.seed, args.max_steps, args.replicas,
                                  y_sampler=sampler)
        summary = {"quantiles": ct.quantiles(), "mean": float(ct.tau.mean()),
                   "censored": int(ct.censored.sum()),
                   "warnings": [str(w.message) for w in caught]}
        if chain is not None:
            summary["dominance"] = _dominance(chain, ct, x0, y0, args.start)
    emit(_coupling_csv(ct, cfg), args.out)
    js = render_json(summary, cfg)
    side = _sibling(args.out, ".summary.json")
    if side:
        emit(js, side)
    else:
        sys.stdout.write(js)
    return 0


def _coupling_csv(ct, cfg):
    rows = [[r, int(t), int(c)] for r, (t, c) in enumerate(zip(ct.tau, ct.censored))]
    return render_csv(["replica", "tau_c", "censored"], rows, cfg)


def _dominance(chain, ct, x0, y0, start):
    """Check P(tau_c > t) against the exact lumped distance it must bound."""
    q = chain.model.q
    ix = chain.index(np.bincount(x0, minlength=q))
    T = int(min(ct.tau.max(), 50_000))
    PT = chain.P.T.tocsr()
    mu = np.zeros(chain.size)
    mu[ix] = 1.0
    if start == "equilibrium-vs-corner":
        nu = chain.pi.copy()
    else:
        nu = np.zeros(chain.size)
        nu[chain.index(np.bincount(y0, minlength=q))] = 1.0
    exact = np.empty(T + 1)
    for t in range(T + 1):
        exact[t] = 0.5 * np.abs(mu - nu).sum()
        mu = PT @ mu
        nu = PT @ nu
    surv = ct.survival(np.arange(T + 1))
    R = len(ct.tau)
    slack = 3 * np.sqrt(surv * (1 - surv) / R) + 1.0 / R
    viol = int(np.sum(exact > surv + slack))
    out = {"checked_steps": T + 1, "violations": viol, "holds": viol == 0}
    if chain.size <= WORST_CASE_LIMIT:
        # worst-case d(t) over every start, reported alongside the rigorous check
        M = np.eye(chain.size)
        worst = np.empty(T + 1)
        for t in range(T + 1):
            worst[t] = 0.5 * np.abs(M - chain.pi[:, None]).sum(axis=0).max()
            M = PT @ M
        out["worst_case_d_violations"] = int(np.sum(worst > surv + slack))
    return out


def cmd_simulate(args) -> int:
    _require_seed(args)
    m = resolve_model(args)
    cfg = _base_cfg(args)
    cfg["resolved_model"] = model_dict(m)
    n = int(args.n)
    init = np.zeros(n, dtype=int)
    tr = simulate_chain(m, n, init, int(args.steps), args.seed, stride=int(args.stride))
    header = ["step"] + [f"count_{k + 1}" for k in range(m.q)]
    rows = [[int(s)] + [int(c) for c in row] for s, row in zip(tr.steps, tr.counts)]
    emit(render_csv(header, rows, cfg), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfglauber", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mfglauber {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, models=("cwp", "gcwp", "bc")):
        sp.add_argument("--config", help="JSON file with default values for any flag")
        sp.add_argument("--model", choices=models)
        sp.add_argument("--q", default=None)
        sp.add_argument("--r", default=None)
        sp.add_argument("--beta", default=None)
        sp.add_argument("--K", default=None)
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("critical", help="critical values table")
    common(sp)
    sp.set_defaults(func=cmd_critical)

    sp = sub.add_parser("verify", help="aggregate path-coupling condition checks")
    common(sp, ("cwp", "gcwp"))
    sp.add_argument("--mesh", type=float, default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("mix", help="exact lumped-chain mixing times")
    common(sp)
    sp.add_argument("--n", default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--profiles", type=int, default=None, metavar="EVERY",
                    help="also write per-n d(t), dbar(t) CSVs, dbar every EVERY steps")
    sp.set_defaults(func=cmd_mix)

    sp = sub.add_parser("couple", help="Monte Carlo coupling times")
    common(sp, ("cwp", "gcwp", "bc", "shuffle"))
    sp.add_argument("--n", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--replicas", type=int, default=None)
    sp.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    sp.add_argument("--start", default=None,
                    help="corners, equilibrium-vs-corner, or comma-separated labels")
    sp.set_defaults(func=cmd_couple)

    sp = sub.add_parser("simulate", help="simulate a Glauber trajectory")
    common(sp)
    sp.add_argument("--n", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--stride", type=int, default=None)
    sp.set_defaults(func=cmd_simulate)
    return p


DEFAULTS = {
    "q": "3", "r": "2", "mesh": 0.01, "eps": None, "replicas": 100,
    "max_steps": 100_000, "start": "corners", "steps": 1000, "stride": 1,
}
EPS_DEFAULT = {"verify": 0.02, "mix": 0.25}


def apply_config(args) -> None:
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        for k, v in cfg.items():
            k = k.replace("-", "_")
            if not hasattr(args, k):
                raise CLIError(f"unknown config key {k!r}")
            if getattr(args, k) is None:
                setattr(args, k, v)
    for k, v in DEFAULTS.items():
        if hasattr(args, k) and getattr(args, k) is None:
            setattr(args, k, v)
    if hasattr(args, "eps") and args.eps is None:
        args.eps = EPS_DEFAULT.get(args.command)
    if getattr(args, "model", None) is None:
        raise CLIError("--model is required")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        apply_config(args)
        return args.func(args)
    except Refusal as exc:
        sys.stderr.write(f"refused: {exc}\n")
        return EXIT_REFUSED
    except CLIError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
