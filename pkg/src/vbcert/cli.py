"""``vbcert`` command line: analysis reports for VC, VI and TD(0).

Exit codes: 0 when the analysis ran (whatever the verdict), 2 for invalid input
or a violated modelling assumption. Reports are deterministic JSON; wall-clock
timings are only added with ``--timings`` so that default reports are
byte-identical across runs.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import math
import pathlib
import sys
import time

import numpy as np

from . import __version__
from .algorithms import FeatureMap, run_sandwich, run_vc, run_vc_error, run_vi, write_trace_csv
from .errors import KindUnavailable, VbcertInputError
from .mdp import induce_policy, load_mdp, load_policy, optimal_value
from .mjls import certify, estimate_mse_curve, verify_mss_sdp
from .positive import (
    LyapunovKind,
    VcCertificate,
    construct_vc_certificate,
    lyapunov_trace,
    verify_lp_left,
    verify_lp_right,
    verify_sdp,
    verify_switched_linf,
)


class _Phases:
    def __init__(self):
        self.times = {}

    @contextlib.contextmanager
    def __call__(self, name):
        start = time.perf_counter()
        yield
        self.times[name] = time.perf_counter() - start


def _digest(files) -> str:
    h = hashlib.sha256()
    for role, path in files:
        h.update(role.encode() + b"\0")
        h.update(pathlib.Path(path).read_bytes())
        h.update(b"\0")
    return "sha256:" + h.hexdigest()


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_vector(path, key):
    raw = _read_json(path)
    if isinstance(raw, dict):
        if set(raw) != {key}:
            raise VbcertInputError(f"{path}: expected a list or {{{key!r}: [...]}}")
        raw = raw[key]
    return np.asarray(raw, dtype=float)


def load_features(path) -> FeatureMap:
    raw = _read_json(path)
    if not isinstance(raw, dict) or set(raw) != {"phi"}:
        raise VbcertInputError(f'{path}: features must be {{"phi": [[...], ...]}}')
    try:
        phi = np.array(raw["phi"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise VbcertInputError(f"{path}: ragged or non-numeric phi ({exc})") from None
    if phi.ndim != 2:
        raise VbcertInputError(f"{path}: phi must be a list of equal-length rows")
    return FeatureMap(phi)


def _bound(x):
    return "unbounded" if math.isinf(x) else float(x)


def _lyapunov_entry(trace, j_ref, cert, kind, floor=None):
    try:
        return lyapunov_trace(trace, j_ref, cert, kind, floor=floor).to_json_dict()
    except KindUnavailable as exc:
        return {"kind": LyapunovKind(kind).value, "unavailable": f"KindUnavailable: {exc}"}


def analyze_vc(mdp_path, policy_path, k=200, j0_path=None, dump_prefix=None):
    phases = _Phases()
    with phases("load"):
        mdp = load_mdp(mdp_path)
        policy = load_policy(policy_path, mdp)
        j0 = np.zeros(mdp.n) if j0_path is None else _load_vector(j0_path, "j0")
        if j0.shape != (mdp.n,):
            raise VbcertInputError(f"j0 must have length {mdp.n}")
    with phases("certificate"):
        pi_ind = induce_policy(mdp, policy)
        cert = construct_vc_certificate(pi_ind)
        a = mdp.gamma * pi_ind.p_pi
        conditions = [verify_lp_right(a, cert.xi, mdp.gamma)]
        if cert.nu is not None:
            conditions += [verify_lp_left(a, cert.nu, mdp.gamma), verify_sdp(a, cert.g, mdp.gamma)]
    with phases("iterate"):
        trace = run_vc(pi_ind, j0, k)
        err = run_vc_error(pi_ind, j0 - pi_ind.j_pi, k)
        exactness = float(np.max(np.abs(trace.iterates - pi_ind.j_pi - err.iterates)))
        zero = np.zeros(mdp.n)
        traces = [_lyapunov_entry(err, zero, cert, kind) for kind in ("V1", "V2", "V3")]
    report = {
        "tool": "vbcert",
        "version": __version__,
        "mode": "vc",
        "input_digest": _digest([("mdp", mdp_path), ("policy", policy_path)] + ([("j0", j0_path)] if j0_path else [])),
        "satisfied": all(c.satisfied for c in conditions),
        "certificate": cert.to_json_dict(),
        "condition_reports": [c.to_json_dict() for c in conditions],
        "lyapunov_traces": traces,
        "vc": {
            "k": k,
            "j_pi": pi_ind.j_pi.tolist(),
            "final_error": float(np.max(np.abs(trace.iterates[-1] - pi_ind.j_pi))),
            "exactness_residual": exactness,
        },
    }
    if dump_prefix:
        write_trace_csv(trace, f"{dump_prefix}.vc_trace.csv")
    return report, phases.times


def analyze_vi(mdp_path, k=None, tol=1e-8, dump_prefix=None):
    phases = _Phases()
    with phases("load"):
        mdp = load_mdp(mdp_path)
    with phases("optimal_value"):
        j_star, pi_star = optimal_value(mdp)
    with phases("iterate"):
        j0 = np.zeros(mdp.n)
        if k is None:
            # a tolerance run first fixes the horizon, the sandwich replays it
            k = run_vi(mdp, j0, None, tol=tol).steps
        sw = run_sandwich(mdp, j0, k, j_star=j_star)
    with phases("certificate"):
        cond = verify_switched_linf(mdp)
        scale = 1.0 + float(np.max(np.abs(j_star)))
        cert = VcCertificate(np.ones(mdp.n), None, None, mdp.gamma)
        # per-step ratios are read only while the error is well above rounding
        v1 = lyapunov_trace(sw.j, j_star, cert, "V1", floor=1e-6 * scale)
        errors = v1.values
        envelope = mdp.gamma ** np.arange(len(errors)) * errors[0]
        slack = 1e-9 * envelope + 1e-12 * scale
        violation = sw.violation()
    report = {
        "tool": "vbcert",
        "version": __version__,
        "mode": "vi",
        "input_digest": _digest([("mdp", mdp_path)]),
        "satisfied": cond.satisfied,
        "j_star": j_star.tolist(),
        "pi_star": (np.argmax(pi_star.pi, axis=1) + 1).tolist(),
        "condition_reports": [cond.to_json_dict()],
        "lyapunov_traces": [v1.to_json_dict()],
        "vi": {
            "steps": k,
            "final_change": float(np.max(np.abs(sw.j.iterates[-1] - sw.j.iterates[-2]))) if k else 0.0,
            "final_error": float(errors[-1]),
        },
        "rate_envelope": {
            "holds": bool(np.all(errors <= envelope + slack)),
            "worst_excess": float(np.max(errors - envelope)),
        },
        "sandwich": {
            "holds": bool(violation <= 1e-9 * scale),
            "max_violation": violation,
            "p_star_selector": (sw.p_star_selector + 1).tolist(),
        },
    }
    if dump_prefix:
        write_trace_csv(sw.j, f"{dump_prefix}.vi_trace.csv")
    return report, phases.times


def analyze_td(mdp_path, policy_path, features_path, alpha="auto", alpha_frac=0.99, runs=0, k=5000, seed=0,
               dump_prefix=None):
    phases = _Phases()
    with phases("load"):
        mdp = load_mdp(mdp_path)
        policy = load_policy(policy_path, mdp)
        features = load_features(features_path)
        if features.phi.shape[0] != mdp.n:
            raise VbcertInputError(f"features have {features.phi.shape[0]} rows, expected {mdp.n}")
    with phases("certificate"):
        pi_ind = induce_policy(mdp, policy)
        chain, model, cert = certify(pi_ind, features)
    step = alpha_frac * cert.alpha_max if alpha == "auto" else float(alpha)
    with phases("verify"):
        rep = verify_mss_sdp(model, cert, chain, step)
    section = {
        "pairs": [[s + 1, t + 1] for s, t in chain.states],
        "p_inf": chain.p_inf.tolist(),
        "theta_pi": model.theta_pi.tolist(),
        "g_bar": cert.g_bar.tolist(),
        "g_tilde": [g.reshape(-1).tolist() for g in cert.g_tilde],
        "g_tilde_residual": cert.g_tilde_residual,
        "alpha_bars": [_bound(a) for a in cert.alpha_bars],
        "g_bounds": [_bound(a) for a in cert.g_bounds],
        "alpha_max": _bound(cert.alpha_max),
        "alpha": rep.alpha,
        "alpha_source": "auto" if alpha == "auto" else "given",
        "sdp_margins": rep.sdp_margins.tolist(),
        "g_margins": rep.g_margins.tolist(),
        "feasible": rep.feasible,
        "oracle_rho": rep.oracle_rho,
        "mss": None if rep.oracle_rho is None else bool(rep.oracle_rho < 1.0),
    }
    if runs > 0:
        with phases("monte_carlo"):
            curve = estimate_mse_curve(model, pi_ind, features, step, runs, k, seed)
        section["mse_curve"] = [float(v) if math.isfinite(v) else None for v in curve]
        section["runs"], section["k"], section["seed"] = runs, k, seed
        if dump_prefix:
            with open(f"{dump_prefix}.mse.csv", "w", encoding="utf-8") as fh:
                fh.write("k,mse\n")
                fh.writelines(f"{t},{float(v)!r}\n" for t, v in enumerate(curve))
    report = {
        "tool": "vbcert",
        "version": __version__,
        "mode": "td",
        "input_digest": _digest([("mdp", mdp_path), ("policy", policy_path), ("features", features_path)]),
        "satisfied": rep.feasible,
        "condition_reports": [],
        "lyapunov_traces": [],
        "mjls_section": section,
    }
    return report, phases.times


def validate(mdp_path):
    mdp = load_mdp(mdp_path)
    return {
        "tool": "vbcert",
        "version": __version__,
        "mode": "validate",
        "input_digest": _digest([("mdp", mdp_path)]),
        "valid": True,
        "num_states": mdp.n,
        "num_actions": mdp.l,
        "gamma": mdp.gamma,
    }


def dumps(report) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def _alpha(text):
    if text == "auto":
        return text
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("alpha must be positive or 'auto'")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbcert", description="Lyapunov certificates for VC, VI and TD(0).")
    parser.add_argument("--version", action="version", version=f"vbcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="report path (JSON)")
        p.add_argument("--dump-traces", action="store_true", help="write trace CSVs next to --out")
        p.add_argument("--timings", action="store_true", help="add wall-clock phase timings to the report")

    p = sub.add_parser("analyze-vc", help="value computation under a fixed policy")
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--j0")
    common(p)

    p = sub.add_parser("analyze-vi", help="value iteration")
    p.add_argument("--mdp", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--tol", type=float, default=1e-8)
    common(p)

    p = sub.add_parser("analyze-td", help="TD(0) with linear features")
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--alpha", type=_alpha, default="auto")
    p.add_argument("--alpha-frac", type=float, default=0.99)
    p.add_argument("--runs", type=int, default=0)
    p.add_argument("--k", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("validate", help="check an MDP file")
    p.add_argument("--mdp", required=True)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    prefix = None
    if getattr(args, "dump_traces", False):
        out = pathlib.Path(args.out)
        prefix = str(out.with_suffix(""))
    try:
        if args.command == "validate":
            report, times = validate(args.mdp), None
        elif args.command == "analyze-vc":
            report, times = analyze_vc(args.mdp, args.policy, args.k, args.j0, prefix)
        elif args.command == "analyze-vi":
            report, times = analyze_vi(args.mdp, args.k, args.tol, prefix)
        else:
            report, times = analyze_td(args.mdp, args.policy, args.features, args.alpha, args.alpha_frac,
                                       args.runs, args.k, args.seed, prefix)
    except (VbcertInputError, json.JSONDecodeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "timings", False) and times is not None:
        report["timings"] = {name: round(sec, 6) for name, sec in times.items()}
    text = dumps(report)
    if args.out:
        pathlib.Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
