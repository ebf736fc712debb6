"""Random-coding achievability: rates, thresholds and Monte Carlo error estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binomtest

from .capacity_solver import capacity_sets
from .channel_model import Dmc, as_probs
from .fisher_geometry import fisher_matrix, gradient_vectors
from .fourth_order_bounds import _is_bsc_shaped, a_eps_bounds, bsc_constants, lower_maximand
from .info_metrics import channel_moments, phi, q_inv
from .np_testing import _compositions, _merge

BLOCK = 2048
LITERAL_BUDGET = 2e8      # M * n * trials above which full codebooks are not drawn
TIE_TOL = 1e-9
LAW_CAP = 5_000_000


class SimulationError(RuntimeError):
    pass


@dataclass
class CodeEnsembleSpec:
    input_dist: np.ndarray
    n: int
    m: int
    log_m: float
    z_star: float
    eps: float
    seed: int = 0
    log_volume: float = math.nan   # nR_n
    t_star: float = math.nan
    t_hat: float = math.nan
    h: Optional[np.ndarray] = None
    omega: float = 0.0
    lattice_mode: bool = False
    capacity: float = math.nan
    dispersion: float = math.nan
    skewness: float = math.nan
    rho: float = 0.0
    predictions: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.log_volume / self.n

    def as_dict(self) -> dict:
        return {"input_dist": self.input_dist.tolist(), "n": self.n, "m": str(self.m),
                "log_m": self.log_m, "log_volume": self.log_volume, "rate": self.rate,
                "z_star": self.z_star, "t_star": self.t_star, "t_hat": self.t_hat, "eps": self.eps,
                "seed": self.seed, "h": None if self.h is None else self.h.tolist(), "omega": self.omega,
                "lattice_mode": self.lattice_mode, "capacity": self.capacity,
                "dispersion": self.dispersion, "skewness": self.skewness, "rho": self.rho,
                "predictions": self.predictions, "extras": self.extras}


def bivariate_prefactor(rho: float, t_eps: float) -> float:
    """phi_{t,rho}(0,0) = phi(t) exp(-(1-rho) t^2/(2(1+rho)))/sqrt(2 pi (1-rho^2))."""
    if not (0.0 <= rho < 1.0):
        raise SimulationError("rho must lie in [0, 1)")
    return phi(t_eps) * math.exp(-(1 - rho) * t_eps ** 2 / (2 * (1 + rho))) / math.sqrt(2 * math.pi * (1 - rho ** 2))


def omega_fn(h, t: float, j: np.ndarray, v: np.ndarray, v_u: float) -> float:
    """omega(h,t) = -h'Jh/2 - t h'v/(2 sqrt(V))."""
    h = np.asarray(h, dtype=float)
    return float(-0.5 * h @ j @ h - t / (2 * math.sqrt(v_u)) * h @ v)


def _floor_exp(log_m: float) -> int:
    if log_m > 700:
        raise SimulationError("code volume exceeds floating range")
    return max(1, int(math.floor(math.exp(log_m))))


def achievable_rate(W: Dmc, eps: float, n: int, h=None, vertex=None, lattice: str = "reject",
                    seed: int = 0) -> CodeEnsembleSpec:
    """Random-coding rate nR_n, input law P_n = P* + h/sqrt(n) and threshold z_n*.

    BSC-shaped channels use the lattice variant (h = 0, z_n* on the lattice).
    vertex selects P* among the Pi* vertices; by default the maximiser of A_lower.
    """
    if _is_bsc_shaped(W):
        return _bsc_rate(float(W.matrix[0, 1]), eps, n, seed)
    t = q_inv(eps)
    analysis = capacity_sets(W, eps)
    b = a_eps_bounds(W, eps, lattice, analysis=analysis)
    if b.a_lower is None:
        raise SimulationError("rho = 1: the achievability constant is undefined")
    p_star = np.asarray(analysis.pi_star_vertices[vertex] if vertex is not None else b.argmax_lower, dtype=float)
    fm = fisher_matrix(p_star, W, analysis)
    gv = gradient_vectors(p_star, W, analysis, eps)
    cm = channel_moments(p_star, W)
    v_u = cm.v_uncond
    s = cm.s_uncond or 0.0
    rho = cm.rho
    ans = float(gv.v @ fm.j_plus @ gv.v) / analysis.v_eps
    h_opt = fm.j_plus @ gv.g
    hv = h_opt if h is None else np.asarray(h, dtype=float)
    if abs(hv.sum()) > 1e-9:
        raise SimulationError("h must sum to zero")
    p_n = p_star + hv / math.sqrt(n)
    if np.any(p_n < -1e-15):
        neg = (hv < 0) & (p_star > 0)
        need = float(np.max((hv[neg] / p_star[neg]) ** 2)) if neg.any() else math.inf
        raise SimulationError(f"P_n leaves the simplex at n={n}; minimal feasible n is {math.ceil(need)}")
    p_n = np.clip(p_n, 0.0, None)
    p_n /= p_n.sum()
    om = omega_fn(hv, t, fm.j_star, gv.v, v_u)
    a_low = lower_maximand(ans, cm.s_cond or 0.0, rho, analysis.v_eps, t)
    c = analysis.c
    n_r = c * n - math.sqrt(n * v_u) * t + 0.5 * math.log(n) + a_low + om - t * t / 8.0 * ans
    t_hat = t - s * (t * t - 1) / (6 * math.sqrt(n))
    t_star = t_hat + 1.0 / math.sqrt(n * v_u)
    z_star = n * c - math.sqrt(n * v_u) * t + s * math.sqrt(v_u) * (t * t - 1) / 6.0 + om - 1.0
    m = _floor_exp(n_r)
    log_m = math.log(m)
    log_m1 = math.log(m - 1) if m > 1 else -math.inf
    pred1 = eps - phi(t) / math.sqrt(n * v_u)
    pred2 = math.exp(log_m1 - z_star) * bivariate_prefactor(rho, t) / (n * v_u) if m > 1 else 0.0
    return CodeEnsembleSpec(
        input_dist=p_n, n=n, m=m, log_m=log_m, z_star=z_star, eps=eps, seed=seed, log_volume=n_r,
        t_star=t_star, t_hat=t_hat, h=hv, omega=om, lattice_mode=False, capacity=c, dispersion=v_u,
        skewness=s, rho=rho,
        predictions={"term1": pred1, "term2": pred2, "total": pred1 + pred2},
        extras={"p_star": p_star.tolist(), "a_lower": a_low, "ans": ans,
                "omega_max": t * t / 8.0 * ans, "h_star": h_opt.tolist(), "a3_holds": b.a3_holds},
    )


def _bsc_rate(lam: float, eps: float, n: int, seed: int) -> CodeEnsembleSpec:
    t = q_inv(eps)
    b = bsc_constants(lam, eps)
    d, k = b.bsc_terms["d"], b.bsc_terms["k"]
    lam_lo = min(lam, 1 - lam)
    v, s, c = b.dispersion, b.skewness, b.capacity
    sv = math.sqrt(n * v)
    n_r = n * c - sv * t + 0.5 * math.log(n) + b.a_lower
    t_hat = t - s * (t * t - 1) / (6 * math.sqrt(n))
    # lattice of T_n: d (e - n lam)/sqrt(nV) with e the number of crossovers
    e_star = math.floor(n * lam_lo + (t_hat * sv + k * d) / d + 1e-12)
    t_star = d * (e_star - n * lam_lo) / sv
    gamma = (t_hat + k * d / sv - t_star) * sv / d
    z_star = n * math.log(2 * (1 - lam_lo)) - d * e_star
    m = _floor_exp(n_r)
    log_m1 = math.log(m - 1) if m > 1 else -math.inf
    ph = phi(t)
    pref = (d / -math.expm1(-d)) ** 2
    pred1 = eps - ph / sv
    pred1_kd = eps - k * d * ph / sv
    pred1_mid = eps - (k - gamma + 0.5) * d * ph / sv
    pred2 = math.exp(log_m1 - z_star) * pref * ph * ph / (n * v) if m > 1 else 0.0
    return CodeEnsembleSpec(
        input_dist=np.array([0.5, 0.5]), n=n, m=m, log_m=math.log(m), z_star=z_star, eps=eps,
        seed=seed, log_volume=n_r, t_star=t_star, t_hat=t_hat, h=np.zeros(2), omega=0.0,
        lattice_mode=True, capacity=c, dispersion=v, skewness=s, rho=0.0,
        predictions={"term1": pred1, "term1_lattice_kd": pred1_kd, "term1_lattice_mid": pred1_mid,
                     "term2": pred2, "total": pred1 + pred2},
        extras={"k": k, "d": d, "gamma": gamma, "e_star": e_star, "a_lower": b.a_lower},
    )


# ---------------------------------------------------------------------------
# sampling helpers

def _rngs(seed: int, trials: int, salt: int):
    blocks = max(1, math.ceil(trials / BLOCK))
    kids = np.random.SeedSequence([seed, salt]).spawn(blocks)
    for j, kid in enumerate(kids):
        size = min(BLOCK, trials - j * BLOCK)
        yield np.random.Generator(np.random.Philox(kid)), size


def _sample_rows(rng, cdf: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sample one column index per entry of rows from the row-wise cdf table."""
    u = rng.random(rows.shape)
    c = cdf[rows]
    out = (u[..., None] >= c[..., :-1]).sum(axis=-1)
    return out


def _log_table(W: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = p @ W
    with np.errstate(divide="ignore"):
        return np.log(W) - np.log(np.where(q > 0, q, 1.0))[None, :]


def _cdf(M: np.ndarray) -> np.ndarray:
    c = np.cumsum(M, axis=-1)
    c[..., -1] = 1.0
    return c


class _CompetitorLaw:
    """Law of a competitor score given the output type, cached per type."""

    def __init__(self, W: np.ndarray, p: np.ndarray, table: np.ndarray):
        self.W, self.p, self.table = W, p, table
        self.cache = {}

    def _letter(self, b: int, m: int):
        sup = (self.p > 0) & (self.W[:, b] > 0)
        vals = self.table[sup, b]
        lp = np.log(self.p[sup])
        vals, lp = _merge(vals, lp)
        C = _compositions(m, vals.size)
        logmult = gammaln(m + 1) - np.sum(gammaln(C + 1), axis=1)
        return _merge(C @ vals, logmult + C @ lp)

    def law(self, counts: tuple):
        if counts in self.cache:
            return self.cache[counts]
        vals, lm = np.zeros(1), np.zeros(1)
        for b, m in enumerate(counts):
            if m == 0:
                continue
            gv, gm = self._letter(b, m)
            if vals.size * gv.size > LAW_CAP:
                raise SimulationError("competitor score law exceeds the atom cap")
            vals, lm = _merge((vals[:, None] + gv[None, :]).ravel(), (lm[:, None] + gm[None, :]).ravel())
        # log P{Z' >= value} for each atom
        tail = np.logaddexp.accumulate(lm[::-1])[::-1]
        self.cache[counts] = (vals, tail)
        return vals, tail

    def log_tail(self, counts: tuple, z: float) -> float:
        vals, tail = self.law(counts)
        i = int(np.searchsorted(vals, z - TIE_TOL * max(1.0, abs(z)), side="left"))
        return float(tail[i]) if i < vals.size else -math.inf

    def log_tails(self, counts: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Vectorised log P{Z' >= z_i | type_i}, grouped by output type."""
        out = np.full(z.shape, -np.inf)
        keys, inv = np.unique(counts, axis=0, return_inverse=True)
        inv = inv.ravel()
        for j, key in enumerate(keys):
            idx = np.nonzero(inv == j)[0]
            vals, tail = self.law(tuple(int(c) for c in key))
            zz = z[idx]
            i = np.searchsorted(vals, zz - TIE_TOL * np.maximum(1.0, np.abs(zz)), side="left")
            ok = i < vals.size
            out[idx[ok]] = tail[i[ok]]
        return out


def _err_given_tail(log_m1: float, log_g: float) -> float:
    """1 - (1 - G)^(M-1)."""
    if log_g == -math.inf or log_m1 == -math.inf:
        return 0.0
    g = math.exp(log_g)
    if g >= 1.0:
        return 1.0
    if g < 1e-12:
        return -math.expm1(-math.exp(log_m1 + log_g))
    return -math.expm1(math.exp(log_m1) * math.log1p(-g))


def _err_given_tails(log_m1: float, log_g: np.ndarray) -> np.ndarray:
    if log_m1 == -math.inf:
        return np.zeros_like(log_g)
    g = np.exp(log_g)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = -np.expm1(-np.exp(log_m1 + log_g))
        big = -np.expm1(math.exp(log_m1) * np.log1p(-np.minimum(g, 1.0)))
    pe = np.where(g < 1e-12, small, big)
    return np.where(g >= 1.0, 1.0, pe)


@dataclass
class SimResult:
    trials: int
    errors: int
    err_rate: float
    ci95: tuple
    term1_est: float
    term2_est: float
    mode: str
    seed: int
    term1_ci95: tuple = (math.nan, math.nan)
    term2_ci95: tuple = (math.nan, math.nan)
    mean_conditional_error: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"trials": self.trials, "errors": self.errors, "err_rate": self.err_rate,
                "ci95": list(self.ci95), "term1_est": self.term1_est, "term1_ci95": list(self.term1_ci95),
                "term2_est": self.term2_est, "term2_ci95": list(self.term2_ci95), "mode": self.mode,
                "seed": self.seed, "mean_conditional_error": self.mean_conditional_error,
                "extras": self.extras}


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple:
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return (float(ci.low), float(ci.high))


def simulate_random_code(spec: CodeEnsembleSpec, W: Dmc, trials: int, seed: Optional[int] = None,
                         mode: str = "auto", budget: float = LITERAL_BUDGET,
                         with_terms: bool = True, term2_method: str = "auto") -> SimResult:
    """Monte Carlo error rate of iid random codes with ML decoding, ties counted as errors.

    mode 'literal' draws all M codewords per trial. mode 'conditional' draws
    the transmitted codeword and output, then draws the error event with its
    exact conditional probability 1 - (1 - G_y(Z_1))^(M-1), where G_y is the
    competitor tail given the output type.
    """
    if trials < 1:
        raise SimulationError("trials must be at least 1")
    seed = spec.seed if seed is None else seed
    n, m = spec.n, spec.m
    cost = float(m) * n * trials
    if mode == "auto":
        mode = "literal" if cost <= budget else "conditional"
    if mode == "literal" and cost > budget:
        raise SimulationError(f"literal decoding needs M*n*trials = {cost:.3g} > budget {budget:.3g}")
    p = as_probs(spec.input_dist)
    Wm = W.matrix
    table = _log_table(Wm, p)
    wcdf = _cdf(Wm)
    pcdf = _cdf(p[None, :])[0]
    log_m1 = math.log(m - 1) if m > 1 else -math.inf
    errors = 0
    below = 0
    cond_sum = 0.0
    law = _CompetitorLaw(Wm, p, table) if mode == "conditional" else None
    for rng, size in _rngs(seed, trials, 0):
        if mode == "literal":
            X = np.searchsorted(pcdf, rng.random((size, m, n)), side="right")
            X = np.minimum(X, p.size - 1)
            Y = _sample_rows(rng, wcdf, X[:, 0, :])
            scores = table[X, Y[:, None, :]].sum(axis=-1)
            z1 = scores[:, 0]
            if m > 1:
                best = scores[:, 1:].max(axis=1)
                errors += int(np.sum(best >= z1 - TIE_TOL * np.maximum(1.0, np.abs(z1))))
        else:
            X = np.minimum(np.searchsorted(pcdf, rng.random((size, n)), side="right"), p.size - 1)
            Y = _sample_rows(rng, wcdf, X)
            z1 = table[X, Y].sum(axis=-1)
            counts = np.stack([(Y == b).sum(axis=1) for b in range(Wm.shape[1])], axis=1)
            u = rng.random(size)
            pe = _err_given_tails(log_m1, law.log_tails(counts, z1))
            cond_sum += float(pe.sum())
            errors += int(np.sum(u < pe))
        below += int(np.sum(z1 < spec.z_star))
    t1 = below / trials
    res = SimResult(trials, errors, errors / trials, clopper_pearson(errors, trials), t1, math.nan, mode, seed,
                    term1_ci95=clopper_pearson(below, trials),
                    mean_conditional_error=cond_sum / trials if mode == "conditional" else None)
    if with_terms:
        t2 = term2_estimate(spec, W, trials, seed, term2_method)
        res.term2_est, res.term2_ci95 = t2["estimate"], t2["ci95"]
        res.extras["term2_rel_se"] = t2["rel_se"]
        res.extras["term2_method"] = t2["method"]
    res.extras["predictions"] = spec.predictions
    return res


def _mean_ci(lw: np.ndarray, trials: int, method: str) -> dict:
    """Mean of exp(lw) with a normal 95% interval, computed in a shifted scale."""
    if not np.isfinite(lw).any():
        return {"estimate": 0.0, "ci95": (0.0, 0.0), "rel_se": math.inf, "method": method}
    mx = float(np.max(lw))
    w = np.exp(lw - mx)
    mean = float(w.mean())
    se = (float(w.std(ddof=1)) if trials > 1 else 0.0) / math.sqrt(trials)
    est = math.exp(mx) * mean
    half = 1.96 * math.exp(mx) * se
    return {"estimate": est, "ci95": (est - half, est + half),
            "rel_se": se / mean if mean > 0 else math.inf, "method": method}


def _tilt_parameter(P: np.ndarray, I: np.ndarray, target: float) -> float:
    """s >= 0 with E_s[i] = target under P_s proportional to P e^{-s i}."""
    from scipy.optimize import brentq

    def mean(s):
        lw = np.log(P) - s * I
        w = np.exp(lw - logsumexp(lw))
        return float(w @ I)

    if target >= mean(0.0) or target <= I.min():
        return 0.0
    hi = 1.0
    while mean(hi) > target and hi < 1e3:
        hi *= 2
    return float(brentq(lambda s: mean(s) - target, 0.0, hi, xtol=1e-12))


def term2_estimate(spec: CodeEnsembleSpec, W: Dmc, trials: int, seed: int, method: str = "auto") -> dict:
    """Estimate (M-1) P{Z_2 >= Z_1 >= z*}.

    'conditional' integrates the competitor out exactly given the output type
    and samples (X, Y) from the per-letter exponential tilt that centres Z_1 on
    z*. 'tilted' samples the competitor from its posterior (weight e^{-Z_2}).
    'auto' uses 'conditional' unless the competitor law is too large.
    """
    if method in ("auto", "conditional"):
        try:
            return _term2_conditional(spec, W, trials, seed)
        except SimulationError:
            if method == "conditional":
                raise
    return _term2_is(spec, W, trials, seed)


def _term2_conditional(spec: CodeEnsembleSpec, W: Dmc, trials: int, seed: int) -> dict:
    p = as_probs(spec.input_dist)
    Wm = W.matrix
    table = _log_table(Wm, p)
    law = _CompetitorLaw(Wm, p, table)
    nx, ny = Wm.shape
    joint = p[:, None] * Wm
    xs, ys = np.nonzero(joint > 0)
    P = joint[xs, ys]
    I = table[xs, ys]
    n = spec.n
    s = _tilt_parameter(P, I, spec.z_star / n)
    lt = np.log(P) - s * I
    log_norm = float(logsumexp(lt))
    cdf = _cdf(np.exp(lt - log_norm)[None, :])[0]
    log_m1 = math.log(spec.m - 1) if spec.m > 1 else -math.inf
    zs = spec.z_star - TIE_TOL * max(1.0, abs(spec.z_star))
    out = []
    for rng, size in _rngs(seed, trials, 3):
        k = np.minimum(np.searchsorted(cdf, rng.random((size, n)), side="right"), P.size - 1)
        z1 = I[k].sum(axis=1)
        Y = ys[k]
        counts = np.stack([(Y == b).sum(axis=1) for b in range(ny)], axis=1)
        lw = np.full(size, -np.inf)
        hit = z1 >= zs
        if hit.any():
            lw[hit] = log_m1 + law.log_tails(counts[hit], z1[hit]) + s * z1[hit] + n * log_norm
        out.append(lw)
    res = _mean_ci(np.concatenate(out), trials, "conditional")
    res["tilt"] = s
    return res


def _term2_is(spec: CodeEnsembleSpec, W: Dmc, trials: int, seed: int) -> dict:
    """(M-1) P{Z_2 >= Z_1 >= z*} under the tilt of the competitor score.

    X ~ P_n, Y ~ W(.|X), X' ~ P_n(x')W(y|x')/(P_n W)(y); the likelihood ratio is e^{-Z_2}.
    """
    p = as_probs(spec.input_dist)
    Wm = W.matrix
    table = _log_table(Wm, p)
    wcdf = _cdf(Wm)
    pcdf = _cdf(p[None, :])[0]
    q = p @ Wm
    post = (p[:, None] * Wm / np.where(q > 0, q, 1.0)[None, :]).T   # rows y: P(x'|y)
    post_cdf = _cdf(post)
    log_m1 = math.log(spec.m - 1) if spec.m > 1 else -math.inf
    logw = []
    for rng, size in _rngs(seed, trials, 1):
        X = np.minimum(np.searchsorted(pcdf, rng.random((size, spec.n)), side="right"), p.size - 1)
        Y = _sample_rows(rng, wcdf, X)
        Xp = _sample_rows(rng, post_cdf, Y)
        z1 = table[X, Y].sum(axis=-1)
        z2 = table[Xp, Y].sum(axis=-1)
        hit = (z2 >= z1 - TIE_TOL * np.maximum(1.0, np.abs(z1))) & (z1 >= spec.z_star - TIE_TOL * max(1.0, abs(spec.z_star)))
        logw.append(np.where(hit, log_m1 - z2, -np.inf))
    return _mean_ci(np.concatenate(logw), trials, "tilted")


def union_bound_terms(spec: CodeEnsembleSpec, W: Dmc, trials: int, seed: Optional[int] = None,
                      term2_method: str = "auto") -> dict:
    """Monte Carlo estimates of P{Z_1 < z*} and (M-1)P{Z_2 >= Z_1 >= z*} with predictions."""
    seed = spec.seed if seed is None else seed
    p = as_probs(spec.input_dist)
    table = _log_table(W.matrix, p)
    wcdf = _cdf(W.matrix)
    pcdf = _cdf(p[None, :])[0]
    below = 0
    for rng, size in _rngs(seed, trials, 2):
        X = np.minimum(np.searchsorted(pcdf, rng.random((size, spec.n)), side="right"), p.size - 1)
        Y = _sample_rows(rng, wcdf, X)
        below += int(np.sum(table[X, Y].sum(axis=-1) < spec.z_star))
    t2 = term2_estimate(spec, W, trials, seed, term2_method)
    ci1 = clopper_pearson(below, trials)
    return {
        "term1": {"estimate": below / trials, "ci95": ci1, "prediction": spec.predictions.get("term1"),
                  "prediction_lattice_kd": spec.predictions.get("term1_lattice_kd"),
                  "prediction_lattice_mid": spec.predictions.get("term1_lattice_mid")},
        "term2": {"estimate": t2["estimate"], "ci95": t2["ci95"], "rel_se": t2["rel_se"],
                  "method": t2["method"], "prediction": spec.predictions.get("term2")},
    }


def bsc_ensemble_error(spec: CodeEnsembleSpec, lam: float) -> float:
    """Exact ensemble error of the uniform iid random code on a BSC (ties count as errors)."""
    from scipy.stats import binom
    n = spec.n
    log_m1 = math.log(spec.m - 1) if spec.m > 1 else -math.inf
    e = np.arange(n + 1)
    # a competitor wins when its Hamming distance to Y is <= e
    log_g = binom.logcdf(e, n, 0.5)
    pe = np.array([_err_given_tail(log_m1, float(g)) for g in log_g])
    return float(np.dot(binom.pmf(e, n, lam), pe))
