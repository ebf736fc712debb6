"""Fourth-order constants A_lower, A_upper and the log-volume bracket."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .capacity_solver import CapacityAnalysis, capacity_sets
from .channel_model import Dmc, detect_lattice, is_weakly_symmetric, make_named_channel
from .fisher_geometry import fisher_matrix, gradient_vectors, norm_jplus
from .info_metrics import channel_moments, q_inv


class BoundsError(RuntimeError):
    """The constants are not defined for this channel (assumption failure)."""

    def __init__(self, message, code="assumption"):
        super().__init__(message)
        self.code = code


@dataclass
class VertexTerms:
    p: np.ndarray
    ans: float
    abns: float
    s: float
    rho: float
    v_eps: float
    upper: float
    lower: Optional[float]

    def as_dict(self):
        return {"p": self.p.tolist(), "ans": self.ans, "abns": self.abns, "s": self.s,
                "rho": self.rho, "v_eps": self.v_eps, "upper": self.upper, "lower": self.lower}


@dataclass
class BoundsResult:
    a_lower: Optional[float]
    a_upper: float
    eps: float
    per_vertex_terms: list = field(default_factory=list)
    lattice_mode: bool = False
    bsc_terms: Optional[dict] = None
    pi_star_singleton: bool = True
    a2_holds: bool = True
    a3_holds: bool = True
    capacity: float = float("nan")
    dispersion: float = float("nan")
    skewness: float = float("nan")
    rho: float = float("nan")
    argmax_lower: Optional[np.ndarray] = None
    argmax_upper: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def gap(self) -> Optional[float]:
        if self.a_lower is None:
            return None
        return self.a_upper - self.a_lower

    @property
    def converse_plus_one(self) -> bool:
        """The converse carries an extra nat when Pi* is not a singleton."""
        return not self.pi_star_singleton

    def as_dict(self) -> dict:
        return {
            "a_lower": self.a_lower,
            "a_upper": self.a_upper,
            "gap": self.gap,
            "eps": self.eps,
            "lattice_mode": self.lattice_mode,
            "bsc_terms": self.bsc_terms,
            "pi_star_singleton": self.pi_star_singleton,
            "converse_plus_one": self.converse_plus_one,
            "a2_holds": self.a2_holds,
            "a3_holds": self.a3_holds,
            "capacity": self.capacity,
            "dispersion": self.dispersion,
            "skewness": self.skewness,
            "rho": self.rho,
            "per_vertex_terms": [t.as_dict() for t in self.per_vertex_terms],
            "notes": list(self.notes),
        }


def _skew(s_sqrt_v: float, t: float) -> float:
    # (S sqrt(V)/6)(t^2 - 1); sign as in info_metrics.skew_term
    return s_sqrt_v * (t * t - 1.0) / 6.0


def upper_maximand(ans, abns, s, v_eps, t) -> float:
    return (t * t / 8.0 * (ans - abns) + _skew(s * math.sqrt(v_eps), t)
            + t * t / 2.0 + 0.5 * math.log(2 * math.pi * v_eps))


def lower_maximand(ans, s, rho, v_eps, t) -> Optional[float]:
    if rho >= 1.0:
        return None
    return (t * t / 8.0 * ans + _skew(s * math.sqrt(v_eps), t)
            + t * t / 2.0 * (1 - rho) / (1 + rho) + 0.5 * math.log(2 * math.pi * v_eps)
            + 0.5 * math.log(1 - rho * rho) - 1.0)


def vertex_terms(P, W: Dmc, analysis: CapacityAnalysis, eps: float, fm=None) -> VertexTerms:
    t = q_inv(eps)
    p = np.asarray(P, dtype=float)
    if fm is None:
        fm = fisher_matrix(p, W, analysis)
    gv = gradient_vectors(p, W, analysis, eps)
    ve = analysis.v_eps
    ans = norm_jplus(gv.v, fm) / ve
    abns = norm_jplus(gv.v_breve, fm) / ve
    cm = channel_moments(p, W)
    s = cm.s_cond if cm.s_cond is not None else 0.0
    rho = cm.rho if cm.rho is not None else 1.0
    return VertexTerms(p, ans, abns, s, rho, ve, upper_maximand(ans, abns, s, ve, t),
                       lower_maximand(ans, s, rho, ve, t))


def _is_bsc_shaped(W: Dmc) -> bool:
    if W.nx != 2 or W.ny != 2:
        return False
    M = W.matrix
    return abs(M[0, 0] - M[1, 1]) < 1e-12 and abs(M[0, 1] - M[1, 0]) < 1e-12 and abs(M[0, 0] - 0.5) > 1e-12


def _face_max(vertices, fn):
    """Maximum of fn over the convex hull of vertices: vertices first, then
    Nelder-Mead on softmax weights started from each vertex."""
    vals = [fn(v) for v in vertices]
    vals_f = [(-np.inf if v is None else v) for v in vals]
    i = int(np.argmax(vals_f))
    best, best_p = vals_f[i], vertices[i]
    if len(vertices) == 1:
        return best, best_p
    V = np.array(vertices)

    def neg(z):
        w = np.exp(z - np.max(z))
        w /= w.sum()
        val = fn(w @ V)
        return np.inf if val is None else -val

    for j in range(len(vertices)):
        z0 = np.full(len(vertices), -8.0)
        z0[j] = 8.0
        res = minimize(neg, z0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000})
        if -res.fun > best:
            w = np.exp(res.x - np.max(res.x))
            best, best_p = -res.fun, (w / w.sum()) @ V
    return best, best_p


def a_eps_bounds(W: Dmc, eps: float, lattice: str = "reject", analysis: Optional[CapacityAnalysis] = None) -> BoundsResult:
    """A_lower and A_upper as maxima over Pi*.

    lattice: 'reject' raises for lattice channels other than the BSC;
    'advisory' evaluates the nonlattice formulas and flags (A3).
    """
    if _is_bsc_shaped(W):
        lam = float(min(W.matrix[0, 1], W.matrix[0, 0]))
        return bsc_constants(float(W.matrix[0, 1]), eps)
    if analysis is None:
        analysis = capacity_sets(W, eps)
    lat = detect_lattice(W, analysis.q_star)
    a3 = not lat.is_lattice
    notes = []
    if not a3:
        msg = f"log W/Q* is a lattice variable (span {lat.span:.6g}); assumption (A3) fails"
        if lattice == "reject":
            raise BoundsError(msg, code="lattice")
        notes.append(msg)
    if not analysis.v_eps > 0:
        raise BoundsError("V_eps = 0: exotic channel, assumption (A1) fails", code="exotic")
    fm = fisher_matrix(analysis.pi_star_vertices[0], W, analysis)
    if fm.rank_j < 2:
        raise BoundsError("rank(J) < 2", code="rank")
    terms = [vertex_terms(P, W, analysis, eps, fm) for P in analysis.pi_star_vertices]

    def up(P):
        return vertex_terms(P, W, analysis, eps, fm).upper

    def lo(P):
        return vertex_terms(P, W, analysis, eps, fm).lower

    a_up, p_up = _face_max(analysis.pi_star_vertices, up)
    a_lo, p_lo = _face_max(analysis.pi_star_vertices, lo)
    a2 = np.isfinite(a_lo)
    if not a2:
        notes.append("rho = 1 on Pi*: assumption (A2) fails, lower constant undefined")
    if analysis.degenerate_pi_star:
        notes.append("Pi* is not a singleton (degenerate dispersion face)")
    tm = vertex_terms(p_lo if a2 else p_up, W, analysis, eps, fm)
    return BoundsResult(
        a_lower=float(a_lo) if a2 else None, a_upper=float(a_up), eps=eps, per_vertex_terms=terms,
        lattice_mode=False, pi_star_singleton=analysis.pi_star_singleton, a2_holds=bool(a2),
        a3_holds=a3, capacity=analysis.c, dispersion=analysis.v_eps, skewness=tm.s, rho=tm.rho,
        argmax_lower=p_lo if a2 else None, argmax_upper=p_up, notes=notes,
    )


def bsc_f(d: float) -> float:
    """f(d) = log(d/(1 - e^-d))."""
    return math.log(d) - math.log(-math.expm1(-d))


def bsc_k(d: float) -> int:
    return max(1, int(math.floor(1.0 / d + 0.5)))


def bsc_constants(lam: float, eps: float) -> BoundsResult:
    if not (0.0 < lam < 1.0) or lam == 0.5:
        raise BoundsError("BSC crossover must lie in (0,1) and differ from 1/2", code="range")
    t = q_inv(eps)
    ell = math.log((1 - lam) / lam)
    d = abs(ell)
    k = bsc_k(d)
    f = bsc_f(d)
    v = lam * (1 - lam) * ell * ell
    s = -abs(1 - 2 * lam) / math.sqrt(lam * (1 - lam))
    # (2 lam - 1) ell = S sqrt(V) = T/V
    a_star = (_skew((2 * lam - 1) * ell, t) + t * t / 2.0
              + 0.5 * math.log(2 * math.pi * lam * (1 - lam) * ell * ell))
    a_up = a_star - f - d / 2.0
    a_lo = a_star - 2 * f - k * d + math.log(k * d)
    c = math.log(2.0) + lam * math.log(lam) + (1 - lam) * math.log(1 - lam)
    return BoundsResult(
        a_lower=a_lo, a_upper=a_up, eps=eps, lattice_mode=True,
        bsc_terms={"a_star": a_star, "f": f, "k": k, "d": d},
        pi_star_singleton=True, a2_holds=True, a3_holds=False, capacity=c, dispersion=v,
        skewness=s, rho=0.0, argmax_lower=np.array([0.5, 0.5]), argmax_upper=np.array([0.5, 0.5]),
    )


def bsc_gap(lam: float) -> float:
    d = abs(math.log((1 - lam) / lam))
    k = bsc_k(d)
    return bsc_f(d) + (k - 0.5) * d - math.log(k * d)


def bito_gap(theta: float, eps: float) -> float:
    """Closed-form gap t^2 rho/(1+rho) - log sqrt(1-rho^2) + 1 for the BITO channel."""
    W = make_named_channel("bito", [theta])
    a = capacity_sets(W, eps)
    cm = channel_moments(a.pi_star_vertices[0], W)
    rho = theta * a.c ** 2 / ((1 - theta) * cm.v_cond)
    t = q_inv(eps)
    return t * t * rho / (1 + rho) - 0.5 * math.log(1 - rho * rho) + 1.0


def log_volume_bracket(W: Dmc, eps: float, n: int, lattice: str = "reject",
                       bounds: Optional[BoundsResult] = None) -> dict:
    b = a_eps_bounds(W, eps, lattice) if bounds is None else bounds
    t = q_inv(eps)
    center = n * b.capacity - math.sqrt(n * b.dispersion) * t + 0.5 * math.log(n)
    return {
        "center": center,
        "lower": None if b.a_lower is None else center + b.a_lower,
        "upper": center + b.a_upper,
        "upper_slack_plus1": b.converse_plus_one,
        "bounds": b,
    }


SWEEP_COLUMNS = ("param", "eps", "a_lower", "a_upper", "gap", "rho", "capacity", "dispersion", "skewness")


def sweep(family: str, param_grid, eps_list, lattice: str = "reject") -> list:
    """One row per (param, eps); failures are recorded in an 'error' field."""
    rows = []
    for prm in param_grid:
        for eps in eps_list:
            row = {"param": float(prm), "eps": float(eps)}
            try:
                W = make_named_channel(family, [prm])
                b = a_eps_bounds(W, eps, lattice)
                row.update(a_lower=b.a_lower, a_upper=b.a_upper, gap=b.gap, rho=b.rho,
                           capacity=b.capacity, dispersion=b.dispersion, skewness=b.skewness)
                if not b.a3_holds and not b.lattice_mode:
                    row["note"] = "lattice"
            except Exception as exc:  # per-row failures are part of the table
                row.update({k: None for k in SWEEP_COLUMNS[2:]})
                row["error"] = {"type": type(exc).__name__, "message": str(exc)}
            rows.append(row)
    return rows


def parse_grid(text: str) -> np.ndarray:
    """'lo:hi:step' (inclusive) or comma-separated values."""
    if ":" in text:
        lo, hi, st = (float(v) for v in text.split(":"))
        if st <= 0 or hi < lo:
            raise ValueError(f"bad grid {text!r}")
        m = int(math.floor((hi - lo) / st + 1e-9))
        return np.round(lo + st * np.arange(m + 1), 12)
    return np.array([float(v) for v in text.split(",") if v.strip()])
