"""Command-line interface: dmcbounds {analyze,bounds,sweep,np-beta,tail,simulate,audit}."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import re
import sys
from typing import Optional

import numpy as np

from .capacity_solver import CapacityError, capacity_sets, dimensionality, saddlepoint_check
from .channel_model import ChannelError, Dmc, parse_channel_spec
from .coding_sim import SimulationError, achievable_rate, simulate_random_code
from .fisher_geometry import (GeometryError, fisher_matrix, game_saddlepoint, gradient_vectors,
                              identity_audit, local_optimality_audit)
from .fourth_order_bounds import (SWEEP_COLUMNS, BoundsError, a_eps_bounds, log_volume_bracket, parse_grid,
                                  sweep)
from .info_metrics import MetricError
from .np_testing import (NPError, ProductTest, llr_sum_distribution, nearest_aligned_alpha, np_baselines,
                         np_beta_asymptotic, np_beta_exact, type_counts)
from .tail_asymptotics import TailError, binomial_tail_check, ld_taylor_audit, make_model, tilted_tail

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2
LN2 = math.log(2.0)

# keys holding nats (scaled by 1/ln 2 under --bits) and nats^2 (by 1/ln^2 2)
NAT_KEYS = {
    "c", "capacity", "a_lower", "a_upper", "gap", "log_beta", "log_prob", "log_exact", "log_asymptotic",
    "center", "lower", "upper", "upper_slack_plus1", "converse_plus_one", "log_volume", "log_m", "rate",
    "z_star", "lambda", "d_bar", "a_n", "bound", "chebyshev_lower", "asymptotic_lower", "omega",
    "omega_max", "diff", "neg_log_beta", "zeta_p_prime", "zeta_p_n", "sampled_max", "excess", "gain",
    "predicted_gain", "threshold", "delta", "gamma_star", "gamma_star_alt",
}
SQ_KEYS = {"dispersion", "v_min", "v_max", "v_eps", "v_bar", "v_cond", "v_uncond", "v_rev"}


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


COMPUTE_ERRORS = (BoundsError, SimulationError, NPError, TailError, GeometryError, CapacityError, MetricError,
                  ArithmeticError, np.linalg.LinAlgError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        m = re.search(r"unrecognized arguments: (\S+)", message) or re.search(r"argument (\S+?):", message)
        flag = m.group(1) if m else "argv"
        if flag.startswith("--") and "/" in flag:
            flag = flag.split("/")[-1]
        raise UsageError(flag, message)


# ---------------------------------------------------------------------------
# serialization

def _plain(obj):
    """Convert to JSON-ready builtins with 15 significant digits."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.as_dict() if hasattr(obj, "as_dict") else dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.15g}")
    return obj


def _to_bits(obj, key: Optional[str] = None):
    if isinstance(obj, dict):
        return {k: _to_bits(v, k) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_to_bits(v, key) for v in obj]
    if isinstance(obj, float) and key is not None:
        if key in NAT_KEYS:
            return float(f"{obj / LN2:.15g}")
        if key in SQ_KEYS:
            return float(f"{obj / LN2 ** 2:.15g}")
    return obj


def _document(command: str, inputs: dict, results, bits: bool) -> dict:
    res = _plain(results)
    if bits:
        res = _to_bits(res)
    return {"schema_version": SCHEMA_VERSION, "command": command, "inputs": _plain(inputs),
            "units": "bits" if bits else "nats", "results": res}


def _error_record(command: str, inputs: dict, exc: BaseException, kind: str) -> dict:
    err = {"kind": kind, "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "code", None) is not None:
        err["code"] = exc.code
    if getattr(exc, "flag", None) is not None:
        err["flag"] = exc.flag
    return {"schema_version": SCHEMA_VERSION, "command": command, "inputs": _plain(inputs), "error": err}


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# validation

def _channel(text: str) -> Dmc:
    try:
        return parse_channel_spec(text)
    except (ChannelError, ValueError, OSError) as exc:
        raise UsageError("--channel", str(exc)) from None


def _prob(flag: str, x: float, closed_hi: bool = False) -> float:
    if not (0.0 < x < 1.0 or (closed_hi and x == 1.0)):
        raise UsageError(flag, f"must lie in (0, 1), got {x}")
    return x


def _positive_int(flag: str, x: int) -> int:
    if x < 1:
        raise UsageError(flag, f"must be a positive integer, got {x}")
    return x


def _eps_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--eps", f"cannot parse {text!r}") from None
    if not vals:
        raise UsageError("--eps", "empty list")
    return [_prob("--eps", v) for v in vals]


def _composition(text: str, W: Dmc, analysis) -> np.ndarray:
    if text == "uniform":
        return np.full(W.nx, 1.0 / W.nx)
    if text in ("capacity", "pstar"):
        return np.asarray(analysis.pi_star_vertices[0], dtype=float)
    try:
        p = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError("--composition", f"cannot parse {text!r}") from None
    if p.size != W.nx or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise UsageError("--composition", "must be a pmf over the channel inputs")
    return p


# ---------------------------------------------------------------------------
# commands

def cmd_analyze(a) -> tuple[dict, dict, int]:
    W = _channel(a.channel)
    eps = _prob("--eps", a.eps)
    if a.tol <= 0:
        raise UsageError("--tol", "must be positive")
    inputs = {"channel": a.channel, "eps": eps, "tol": a.tol, "geometry": a.geometry}
    an = capacity_sets(W, eps, tol=a.tol)
    res = an.as_dict()
    if a.geometry:
        geo = []
        for v in an.pi_star_vertices:
            fm = fisher_matrix(v, W, an)
            gv = gradient_vectors(v, W, an, eps)
            entry = {"p": v, "j_full": fm.j_full, "j_star": fm.j_star, "j_plus": fm.j_plus,
                     "rank_j": fm.rank_j, "det_j_full": float(np.linalg.det(fm.j_full)),
                     "jp_row_sums": fm.j_full @ np.asarray(v), "v": gv.v, "v_tilde": gv.v_tilde,
                     "v_breve": gv.v_breve, "g": gv.g, "g_tilde": gv.g_tilde, "g_breve": gv.g_breve}
            if fm.rank_j >= 2:
                sp = game_saddlepoint(gv, fm)
                entry.update(h_star=sp["h_star"], h_tilde_star=sp["h_tilde_star"], gamma_star=sp["gamma_star"])
            geo.append(entry)
        res["geometry"] = geo
    return inputs, res, EXIT_OK


def cmd_bounds(a):
    W = _channel(a.channel)
    eps = _prob("--eps", a.eps)
    inputs = {"channel": a.channel, "eps": eps, "n": a.n, "lattice": a.lattice}
    b = a_eps_bounds(W, eps, a.lattice)
    res = b.as_dict()
    if a.n is not None:
        br = log_volume_bracket(W, eps, _positive_int("--n", a.n), a.lattice, bounds=b)
        res["log_volume_bracket"] = {k: v for k, v in br.items() if k != "bounds"}
    return inputs, res, EXIT_OK


def cmd_sweep(a):
    try:
        grid = parse_grid(a.grid)
    except ValueError as exc:
        raise UsageError("--grid", str(exc)) from None
    eps_list = _eps_list(a.eps)
    inputs = {"family": a.family, "grid": a.grid, "eps": eps_list, "lattice": a.lattice, "format": a.format}
    rows = sweep(a.family, grid, eps_list, a.lattice)
    return inputs, rows, EXIT_OK


def _sweep_csv(rows: list, bits: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(SWEEP_COLUMNS) + ["error"])
    for r in rows:
        line = []
        for k in SWEEP_COLUMNS:
            v = _plain(r.get(k))
            if bits and isinstance(v, float):
                v = _to_bits({k: v})[k]
            line.append("" if v is None else v)
        err = r.get("error")
        line.append("" if err is None else f"{err['type']}: {err['message']}")
        w.writerow(line)
    return buf.getvalue()


def cmd_np_beta(a):
    W = _channel(a.channel)
    n = _positive_int("--n", a.n)
    alpha = _prob("--alpha", a.alpha)
    an = capacity_sets(W, 0.5 if alpha >= 0.5 else 0.4)
    comp = _composition(a.composition, W, an)
    q = an.q_star if a.q is None else _composition(a.q, Dmc(np.eye(W.ny)), an)
    counts = type_counts(comp, n)
    test = ProductTest.composition(counts, W, q)
    inputs = {"channel": a.channel, "composition": a.composition, "n": n, "alpha": alpha, "mode": a.mode,
              "align": a.align}
    res = {"counts": counts, "q": q}
    dist = None
    if a.mode in ("exact", "both") or a.align:
        dist = llr_sum_distribution(test)
    if a.align:
        alpha = nearest_aligned_alpha(test, alpha, dist)
        res["alpha_aligned"] = alpha
    if a.mode in ("exact", "both"):
        res["exact"] = np_beta_exact(test, alpha, dist)
    if a.mode in ("asym", "both"):
        res["asymptotic"] = np_beta_asymptotic(test, alpha)
    if a.mode == "both":
        res["diff"] = res["exact"].log_beta - res["asymptotic"]["log_beta"]
    res["baselines"] = np_baselines(test, alpha)
    return inputs, res, EXIT_OK


def _parse_model(text: str):
    parts = text.split(":")
    try:
        if parts[0] == "binomial" and len(parts) == 3:
            return "binomial", (int(parts[1]), float(parts[2]))
        if parts[0] == "pmf" and len(parts) == 3:
            vals = [float(v) for v in parts[1].split(",")]
            probs = [float(v) for v in parts[2].split(",")]
            return "pmf", make_model(vals, probs)
    except (ValueError, TailError, ChannelError) as exc:
        raise UsageError("--model", str(exc)) from None
    raise UsageError("--model", f"expected binomial:n:p or pmf:v1,..:p1,.., got {text!r}")


def cmd_tail(a):
    kind, model = _parse_model(a.model)
    inputs = {"model": a.model, "a": a.a, "n": a.n, "strict": a.strict}
    if kind == "binomial":
        n, p = model
        _positive_int("--model", n)
        _prob("--model", p)
        if not p < a.a < 1.0:
            raise UsageError("--a", "must lie in (p, 1)")
        return inputs, binomial_tail_check(n, p, a.a), EXIT_OK
    if a.n is None:
        raise UsageError("--n", "required for pmf models")
    r = tilted_tail(model, _positive_int("--n", a.n), a.a, strict=a.strict)
    return inputs, r, EXIT_OK


def cmd_simulate(a):
    W = _channel(a.channel)
    eps = _prob("--eps", a.eps)
    n = _positive_int("--n", a.n)
    trials = _positive_int("--trials", a.trials)
    inputs = {"channel": a.channel, "eps": eps, "n": n, "trials": trials, "seed": a.seed, "mode": a.mode,
              "lattice": a.lattice}
    spec = achievable_rate(W, eps, n, lattice=a.lattice, seed=a.seed)
    r = simulate_random_code(spec, W, trials, seed=a.seed, mode=a.mode, with_terms=not a.no_terms)
    return inputs, {"code": spec, "simulation": r}, EXIT_OK


def cmd_audit(a):
    W = _channel(a.channel)
    eps = _prob("--eps", a.eps)
    inputs = {"channel": a.channel, "eps": eps, "seed": a.seed, "n": a.n, "delta": a.delta,
              "samples": a.samples}
    an = capacity_sets(W, eps)
    out = {}
    out["identities"] = identity_audit(W, eps, an, seed=a.seed)
    p0 = np.asarray(an.pi_vertices[0], dtype=float)
    out["saddlepoint"] = saddlepoint_check(p0, an, W, seed=a.seed)
    fm = fisher_matrix(an.pi_star_vertices[0], W, an)
    out["dimensionality"] = dimensionality(an, fm.j_dagger, fm.j_star)
    # information density under P* x W against P* x Q*
    p = np.asarray(an.pi_star_vertices[0], dtype=float)
    joint = (p[:, None] * W.matrix).ravel()
    prod = (p[:, None] * an.q_star[None, :]).ravel()
    try:
        ta = ld_taylor_audit(joint, prod)
        out["ld_taylor"] = ta
        taylor_ok = ta.passed
    except TailError as exc:
        out["ld_taylor"] = {"skipped": str(exc), "passed": True}
        taylor_ok = True
    lo = local_optimality_audit(p, W, eps, a.n, a.delta, an, samples=a.samples, seed=a.seed)
    gain_ok = abs(lo["gain"] - lo["predicted_gain"]) <= 0.1 * abs(lo["predicted_gain"]) + 1e-6
    lo["gain_ok"] = bool(gain_ok)
    lo["passed"] = bool(lo["slack_ok"] and gain_ok)
    out["local_optimality"] = lo
    passed = (out["identities"]["passed"] and out["saddlepoint"]["passed"] and out["dimensionality"]["passed"]
              and taylor_ok and lo["passed"])
    out["passed"] = bool(passed)
    return inputs, out, EXIT_OK if passed else EXIT_COMPUTE


COMMANDS = {"analyze": cmd_analyze, "bounds": cmd_bounds, "sweep": cmd_sweep, "np-beta": cmd_np_beta,
            "tail": cmd_tail, "simulate": cmd_simulate, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--bits", action="store_true", help="display log-quantities in bits")
    common.add_argument("--output", "-o", default=None, help="write to this path instead of stdout")
    p = _Parser(prog="dmcbounds", description="Finite-blocklength bounds for discrete memoryless channels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("analyze", parents=[common], help="capacity, Pi, Pi*, dispersions")
    s.add_argument("--channel", required=True)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--geometry", action="store_true", help="add Fisher matrices and gradients")

    s = sub.add_parser("bounds", parents=[common], help="fourth-order constants")
    s.add_argument("--channel", required=True)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--lattice", choices=("reject", "advisory"), default="reject")

    s = sub.add_parser("sweep", parents=[common], help="constants over a parameter grid")
    s.add_argument("--family", required=True, choices=("bsc", "z", "bito", "bec"))
    s.add_argument("--grid", required=True, help="lo:hi:step or comma list")
    s.add_argument("--eps", default="1e-3", help="comma list")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--lattice", choices=("reject", "advisory"), default="advisory")

    s = sub.add_parser("np-beta", parents=[common], help="exact and asymptotic Neyman-Pearson beta")
    s.add_argument("--channel", required=True)
    s.add_argument("--composition", default="uniform", help="uniform, capacity, or p1,p2,...")
    s.add_argument("--q", default=None, help="output distribution (default Q*)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--mode", choices=("exact", "asym", "both"), default="both")
    s.add_argument("--align", action="store_true", help="move alpha to the nearest lattice-aligned level")

    s = sub.add_parser("tail", parents=[common], help="strong large-deviation tail estimates")
    s.add_argument("--model", required=True, help="binomial:n:p or pmf:v1,v2,..:p1,p2,..")
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--strict", action="store_true")

    s = sub.add_parser("simulate", parents=[common], help="random-coding Monte Carlo")
    s.add_argument("--channel", required=True)
    s.add_argument("--eps", type=float, default=1e-2)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("auto", "literal", "conditional"), default="auto")
    s.add_argument("--lattice", choices=("reject", "advisory"), default="reject")
    s.add_argument("--no-terms", action="store_true", help="skip the union-bound term estimates")

    s = sub.add_parser("audit", parents=[common], help="run the identity and diagnostic checks")
    s.add_argument("--channel", required=True)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=float, default=1e6)
    s.add_argument("--delta", type=float, default=1e-3)
    s.add_argument("--samples", type=int, default=2000)
    return p


def _emit(text: str, path: Optional[str], stream) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stream.write(text)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = argv[0] if argv else ""
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(_dump(_error_record(command, {"argv": argv}, exc, "usage")))
        return EXIT_USAGE
    command = args.command
    fn = COMMANDS[command]
    try:
        inputs, results, code = fn(args)
    except UsageError as exc:
        sys.stderr.write(_dump(_error_record(command, {"argv": argv}, exc, "usage")))
        return EXIT_USAGE
    except COMPUTE_ERRORS as exc:
        _emit(_dump(_error_record(command, {"argv": argv}, exc, "computational")), args.output, sys.stdout)
        return EXIT_COMPUTE
    if command == "sweep" and args.format == "csv":
        _emit(_sweep_csv(results, args.bits), args.output, sys.stdout)
    else:
        _emit(_dump(_document(command, inputs, results, args.bits)), args.output, sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
