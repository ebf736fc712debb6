"""Exponential tilting, large deviations and strong tail asymptotics for finite-support variables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom, norm

from .channel_model import LatticeStructure, as_probs, lattice_of_values
from .info_metrics import divergence_moments, phi


class TailError(ValueError):
    pass


@dataclass(frozen=True)
class CgfModel:
    """Distribution of a finite-support variable L.

    defect is mass at L = -inf (LLR models where Q charges points P does not);
    it only enters kappa at s = 0.
    """
    values: np.ndarray
    probs: np.ndarray
    lattice: LatticeStructure
    defect: float = 0.0

    @property
    def mean(self) -> float:
        if self.defect > 0:
            return -math.inf
        return float(np.dot(self.probs, self.values))


def make_model(values, probs) -> CgfModel:
    v = np.asarray(values, dtype=float)
    p = as_probs(probs)
    if v.shape != p.shape:
        raise TailError("values and probs differ in length")
    keep = p > 0
    v, p = v[keep], p[keep]
    order = np.argsort(v)
    v, p = v[order], p[order]
    if np.any(np.diff(v) <= 0):
        raise TailError("atom values must be distinct")
    return CgfModel(v, p, lattice_of_values(v))


def llr_model(P, Q) -> CgfModel:
    """L = log P/Q under Q, atoms merged when equal."""
    p, q = as_probs(P), as_probs(Q)
    if np.any(q[p > 0] <= 0):
        raise TailError("P is not absolutely continuous with respect to Q")
    sup = p > 0
    vals = np.log(p[sup]) - np.log(q[sup])
    masses = q[sup]
    uv, inv = np.unique(np.round(vals, 13), return_inverse=True)
    merged = np.zeros(uv.size)
    np.add.at(merged, inv, masses)
    exact = np.array([vals[inv == k].mean() for k in range(uv.size)])
    defect = float(max(0.0, 1.0 - merged.sum()))
    return CgfModel(exact, merged / merged.sum() if defect == 0 else merged, lattice_of_values(exact), defect)


def bernoulli_model(p: float) -> CgfModel:
    return make_model([0.0, 1.0], [1 - p, p])


def cgf_eval(model: CgfModel, s: float) -> tuple[float, float, float, float]:
    """kappa(s) and its first three derivatives, via tilted weights."""
    lw = np.log(model.probs) + s * model.values
    if s == 0.0 and model.defect > 0:
        lw = np.append(lw, math.log(model.defect))
        vals = np.append(model.values, 0.0)
    else:
        vals = model.values
    k = float(logsumexp(lw))
    w = np.exp(lw - k)
    if s == 0.0 and model.defect > 0:
        # derivatives are not defined at s = 0 with mass at -inf
        return k, math.nan, math.nan, math.nan
    m = float(np.dot(w, vals))
    c = vals - m
    return k, m, float(np.dot(w, c * c)), float(np.dot(w, c ** 3))


def saddlepoint_solve(model: CgfModel, a: float, tol: float = 1e-12) -> float:
    """Root of kappa'(s) = a by safeguarded Newton."""
    lo_v, hi_v = float(model.values[0]), float(model.values[-1])
    if not (lo_v < a < hi_v):
        raise TailError(f"a = {a} outside the open tilting range ({lo_v}, {hi_v})")
    lo, hi = -1.0, 1.0
    if model.defect > 0:
        # mass at -inf: kappa is finite only for s > 0
        lo = 1e-12
        if cgf_eval(model, lo)[1] >= a:
            raise TailError("a lies below the tilting range reachable with s > 0")
    while cgf_eval(model, lo)[1] > a:
        lo *= 2.0
        if lo < -1e6:
            raise TailError("saddlepoint bracket failed")
    while cgf_eval(model, hi)[1] < a:
        hi *= 2.0
        if hi > 1e6:
            raise TailError("saddlepoint bracket failed")
    s = 0.0 if model.defect == 0 else 1.0
    if not lo < s < hi:
        s = 0.5 * (lo + hi)
    for _ in range(200):
        _, k1, k2, _ = cgf_eval(model, s)
        f = k1 - a
        if abs(f) < tol:
            return s
        if f > 0:
            hi = s
        else:
            lo = s
        step = f / k2 if k2 > 0 else math.inf
        s_new = s - step
        if not lo < s_new < hi:
            s_new = 0.5 * (lo + hi)
        s = s_new
    if abs(cgf_eval(model, s)[1] - a) < 1e3 * tol:
        return s
    raise TailError("saddlepoint iteration did not converge")


def large_dev_fn(model: CgfModel, a: float) -> tuple[float, float, float]:
    """(Lambda(a), s, kappa''(s)) with Lambda(a) = a s - kappa(s)."""
    s = saddlepoint_solve(model, a)
    k, _, k2, _ = cgf_eval(model, s)
    return a * s - k, s, k2


def lambda_third_derivative_fd(model: CgfModel, a: float, h: float) -> float:
    """Lambda''' at a by a five-point central difference with one Richardson step."""
    def d3(hh):
        L = [large_dev_fn(model, a + j * hh)[0] for j in (-2, -1, 1, 2)]
        return (L[3] - 2 * L[2] + 2 * L[1] - L[0]) / (2 * hh ** 3)
    return (4 * d3(h / 2) - d3(h)) / 3.0


@dataclass
class TaylorAudit:
    d: float
    v: float
    t: float
    deltas: np.ndarray
    residuals: np.ndarray
    k_fit: float           # max |r|/|a-D|^3 over the grid
    c3_fit: float          # least-squares cubic coefficient
    lambda3_fd: float
    lambda3_pred: float    # -T/V^3
    fit_ok: bool
    lambda3_ok: bool

    @property
    def passed(self) -> bool:
        return self.fit_ok and self.lambda3_ok

    def as_dict(self) -> dict:
        return {"d": self.d, "v": self.v, "t": self.t, "k_fit": self.k_fit, "c3_fit": self.c3_fit,
                "lambda3_fd": self.lambda3_fd, "lambda3_pred": self.lambda3_pred,
                "max_residual": float(np.max(np.abs(self.residuals))),
                "fit_ok": self.fit_ok, "lambda3_ok": self.lambda3_ok, "passed": self.passed}


def ld_taylor_audit(P, Q, n_grid: int = 25, rel_tol: float = 0.01, abs_tol: float = 1e-3) -> TaylorAudit:
    """Check Lambda(a) = a + (a-D)^2/(2V) + O((a-D)^3) for L = log P/Q under Q."""
    dm = divergence_moments(P, Q)
    if not (dm.d > 0 and dm.v > 0):
        raise TailError("the Taylor audit needs D > 0 and V > 0")
    model = llr_model(P, Q)
    lo_v, hi_v = float(model.values[0]), float(model.values[-1])
    room = min(dm.d - lo_v, hi_v - dm.d)
    mags = np.logspace(-4, -1, n_grid)
    mags = mags[mags < 0.5 * room]
    deltas = np.concatenate([-mags[::-1], mags])
    res = np.empty(deltas.size)
    for i, dl in enumerate(deltas):
        a = dm.d + dl
        res[i] = large_dev_fn(model, a)[0] - a - dl * dl / (2 * dm.v)
    k_fit = float(np.max(np.abs(res) / np.abs(deltas) ** 3))
    pred3 = -dm.t / dm.v ** 3
    # fit r/delta^3 = c3 + c4 delta where the cubic term dominates and
    # roundoff in Lambda is still negligible
    win = (np.abs(deltas) >= 1e-3) & (np.abs(deltas) <= 1e-2)
    if win.sum() < 4:
        win = np.abs(deltas) >= np.min(np.abs(deltas))
    A = np.column_stack([np.ones(win.sum()), deltas[win]])
    y = res[win] / deltas[win] ** 3
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    c3, c4 = float(coef[0]), float(coef[1])
    fit_err = float(np.max(np.abs(y - A @ coef)))
    size = max(abs(c3), abs(c4) * float(np.max(np.abs(deltas[win]))), abs(pred3) / 6.0)
    fit_ok = bool(np.isfinite(k_fit) and fit_err <= 0.01 * size + 1e-6
                  and abs(c3 - pred3 / 6.0) <= 0.02 * abs(pred3) / 6.0 + 1e-4)
    h = 1e-2 * math.sqrt(dm.v)
    h = min(h, 0.2 * room)
    l3 = lambda_third_derivative_fd(model, dm.d, h)
    l3_ok = abs(l3 - pred3) <= rel_tol * abs(pred3) if abs(pred3) > abs_tol else abs(l3 - pred3) <= abs_tol
    return TaylorAudit(dm.d, dm.v, dm.t, deltas, res, k_fit, c3, l3, pred3, fit_ok, bool(l3_ok))


# ---------------------------------------------------------------------------
# Edgeworth and Cornish-Fisher

def edgeworth_cdf(t: float, skew: float, n: int, lattice: Optional[LatticeStructure] = None) -> float:
    """P{W_n <= t} ~ Phi(t) - (S/(6 sqrt n))(t^2 - 1) phi(t).

    For lattice sums the expansion is valid at midpoints between lattice
    points (equivalently at lattice points with half the jump counted), see
    lattice_midpoint. The lattice argument is accepted for that reason and
    does not change the value.
    """
    if n < 1:
        raise TailError("n must be at least 1")
    return float(norm.cdf(t) - skew / (6.0 * math.sqrt(n)) * (t * t - 1.0) * phi(t))


def lattice_midpoint(x: float, lattice: LatticeStructure) -> float:
    """Midpoint of the lattice cell containing x (the points where the expansion applies)."""
    if not lattice.is_lattice:
        return x
    k = math.floor((x - lattice.offset) / lattice.span)
    return lattice.offset + (k + 0.5) * lattice.span


def cornish_fisher_quantile(eps: float, skew: float, n: int) -> float:
    """Upper quantile t with P{W_n > t} ~ eps: t_eps + (S/(6 sqrt n))(t_eps^2 - 1)."""
    if not 0.0 < eps < 1.0:
        raise TailError("eps must lie in (0, 1)")
    if n < 1:
        raise TailError("n must be at least 1")
    t = float(-norm.ppf(eps))
    return t + skew / (6.0 * math.sqrt(n)) * (t * t - 1.0)


# ---------------------------------------------------------------------------
# strong large deviations

@dataclass
class TailResult:
    log_prob: float
    s: float
    lam: float
    kappa2: float
    a_used: float
    adjustment: float
    lattice_mode: bool
    span: float = 0.0

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)

    def as_dict(self) -> dict:
        return {"prob": self.prob, "log_prob": self.log_prob, "s": self.s, "lambda": self.lam,
                "kappa2": self.kappa2, "a_used": self.a_used, "adjustment": self.adjustment,
                "lattice_mode": self.lattice_mode, "span": self.span}


def _lattice_sum_align(model: CgfModel, n: int, a: float, strict: bool) -> float:
    """Smallest value of the n-fold sum in {>= n a} (or {> n a}), divided by n."""
    lat = model.lattice
    x = (n * a - n * lat.offset) / lat.span
    k = math.ceil(x - 1e-9)
    if strict and abs(k - x) < 1e-9:
        k += 1
    return (n * lat.offset + k * lat.span) / n


def tilted_tail(model: CgfModel, n: int, a: float, strict: bool = False,
                lattice: Optional[bool] = None) -> TailResult:
    """Bahadur-Rao (nonlattice) or Blackwell-Hodges (lattice) estimate of P{sum L_i >= n a}.

    In lattice mode the threshold is moved to the next point of the range
    of the sum; the shift in a is returned as the adjustment.
    """
    if n < 1:
        raise TailError("n must be at least 1")
    use_lat = model.lattice.is_lattice if lattice is None else lattice
    if use_lat and model.lattice.span > 0:
        a_used = _lattice_sum_align(model, n, a, strict)
    else:
        a_used = a
        use_lat = False
    lam, s, k2 = large_dev_fn(model, a_used)
    if not s > 0:
        raise TailError("a must lie above the mean of L")
    if not k2 > 0:
        raise TailError("degenerate kappa''")
    logp = -n * lam - 0.5 * math.log(2 * math.pi * n * k2)
    if use_lat:
        d = model.lattice.span
        logp += math.log(d) - math.log(-math.expm1(-s * d))
    else:
        logp -= math.log(s)
    return TailResult(logp, s, lam, k2, a_used, a_used - a, use_lat,
                      model.lattice.span if use_lat else 0.0)


def lattice_prefactor(span: float, s: float = 1.0) -> float:
    """d/(1 - e^{-s d}) as a log; tends to -log s as d -> 0."""
    return math.log(span) - math.log(-math.expm1(-s * span))


def llr_normal_regime_tail(d_bar: float, v_bar: float, n: int, t: float, c: float,
                           span: Optional[float] = None) -> float:
    """log Q{sum L_i >= n a_n} with a_n = D - t sqrt(V/n) + c/n (normal-regime form)."""
    a_n = d_bar - t * math.sqrt(v_bar / n) + c / n
    val = -n * a_n - 0.5 * t * t - 0.5 * math.log(2 * math.pi * n * v_bar)
    if span is not None and span > 0:
        val += lattice_prefactor(span)
    return val


def binomial_log_tail(n: int, p: float, k: int) -> float:
    """log P{Bin(n,p) >= k} by log-sum-exp over the pmf."""
    if k <= 0:
        return 0.0
    if k > n:
        return -math.inf
    ks = np.arange(k, n + 1)
    return float(logsumexp(binom.logpmf(ks, n, p)))


def binomial_tail_asymptotic(n: int, p: float, a: float) -> float:
    """log of (a/(2a-1)) e^{-n d(a||p)}/sqrt(2 pi a(1-a) n) generalised to any p < a < 1."""
    if not p < a < 1:
        raise TailError("need p < a < 1")
    d = a * math.log(a / p) + (1 - a) * math.log((1 - a) / (1 - p))
    s = math.log(a * (1 - p) / ((1 - a) * p))
    return -n * d - 0.5 * math.log(2 * math.pi * a * (1 - a) * n) - math.log(-math.expm1(-s))


def binomial_tail_check(n: int, p: float, a: float) -> dict:
    """Exact vs asymptotic tail at the first integer k >= n a."""
    k = math.ceil(n * a - 1e-9)
    a_used = k / n
    ex = binomial_log_tail(n, p, k)
    asy = binomial_tail_asymptotic(n, p, a_used)
    d = a_used * math.log(a_used / p) + (1 - a_used) * math.log((1 - a_used) / (1 - p))
    return {"n": n, "k": k, "a_used": a_used, "exact": math.exp(ex), "asymptotic": math.exp(asy),
            "log_exact": ex, "log_asymptotic": asy, "ratio": math.exp(ex - asy), "lambda": d,
            "s": math.log(a_used * (1 - p) / ((1 - a_used) * p))}


# ---------------------------------------------------------------------------
# nonlattice heuristic and Chaganty-Sethuraman conditions

def nl_heuristic(components: Sequence[CgfModel], min_fraction: float = 0.5) -> dict:
    """Advisory witness of the semistrong nonlattice conditions.

    NL1: every distinct component law is nonlattice.
    NL2: at least min_fraction of the components are nonlattice.
    NL3: some pair of components has a nonlattice convolution.
    """
    flags = [not c.lattice.is_lattice for c in components]
    frac = float(np.mean(flags)) if flags else 0.0
    nl3 = False
    distinct = []
    for c in components:
        if not any(c.values.shape == o.values.shape and np.allclose(c.values, o.values)
                   and np.allclose(c.probs, o.probs) for o in distinct):
            distinct.append(c)
    for i in range(len(distinct)):
        for j in range(i, len(distinct)):
            sums = (distinct[i].values[:, None] + distinct[j].values[None, :]).ravel()
            if not lattice_of_values(sums).is_lattice:
                nl3 = True
                break
        if nl3:
            break
    return {"nl1": bool(flags) and all(flags), "nl2": frac >= min_fraction, "nl3": nl3,
            "nonlattice_fraction": frac, "semistrong": (bool(flags) and all(flags)) or frac >= min_fraction or nl3}


def cs_conditions(components: Sequence[CgfModel], s_grid=(0.5, 1.0, 1.5), floor: float = 1e-9) -> dict:
    """Numerical check of a bounded averaged cgf and a kappa'' floor on an s-grid."""
    kmax, k2min = 0.0, math.inf
    for s in s_grid:
        vals = [cgf_eval(c, s) for c in components]
        kmax = max(kmax, abs(float(np.mean([v[0] for v in vals]))))
        k2min = min(k2min, float(np.mean([v[2] for v in vals])))
    return {"cs1_bound": kmax, "cs1": bool(np.isfinite(kmax)), "cs2_min_kappa2": k2min, "cs2": k2min > floor}
