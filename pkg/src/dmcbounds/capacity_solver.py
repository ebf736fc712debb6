"""Capacity, the capacity-achieving sets Pi and Pi*, and dimension bookkeeping."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls

from .channel_model import Dmc, Pmf, as_probs
from .info_metrics import channel_moments, conditional_moments, divergence_moments

DEFAULT_TOL = 1e-12
MAX_ITER = 1_000_000
WARM_ITER = 20_000
MAX_VERTICES = 10_000
MAX_BASES = 200_000
RANK_CUT = 1e-9


class CapacityError(RuntimeError):
    pass


def _row_divergences(W: np.ndarray, q: np.ndarray) -> np.ndarray:
    """D(W_x || q) for every row, with 0 log 0 = 0."""
    out = np.empty(W.shape[0])
    for x in range(W.shape[0]):
        s = W[x] > 0
        if np.any(q[s] <= 0):
            out[x] = np.inf
        else:
            out[x] = math.fsum(W[x, s] * (np.log(W[x, s]) - np.log(q[s])))
    return out


def _blahut_arimoto(W: np.ndarray, tol: float, max_iter: int, p0=None):
    nx = W.shape[0]
    p = np.full(nx, 1.0 / nx) if p0 is None else np.asarray(p0, dtype=float).copy()
    logW = np.where(W > 0, np.log(np.where(W > 0, W, 1.0)), 0.0)
    gap = np.inf
    for it in range(max_iter):
        q = p @ W
        logq = np.log(np.where(q > 0, q, 1.0))
        d = np.sum(W * (logW - logq[None, :]), axis=1)
        I = float(p @ d)
        gap = float(np.max(d) - I)
        if gap < tol:
            return p, it, gap
        # exponent shift keeps exp() in range
        p = p * np.exp(d - np.max(d))
        p /= p.sum()
    return p, max_iter, gap


def _polish(W: np.ndarray, p: np.ndarray, support: np.ndarray, iters: int = 60):
    """Newton/Gauss-Newton on D(W_x||PW) = c for x in support, sum P = 1."""
    S = support
    ps = p[S].copy()
    c = 0.0
    for _ in range(iters):
        full = np.zeros(W.shape[0])
        full[S] = ps
        q = full @ W
        if np.any(q[np.any(W[S] > 0, axis=0)] <= 0):
            return None
        d = _row_divergences(W[S], q)
        c = float(ps @ d)
        r = np.concatenate([d - c, [ps.sum() - 1.0]])
        if np.max(np.abs(r)) < 1e-15:
            break
        qq = np.where(q > 0, q, 1.0)
        J = (W[S] / qq) @ W[S].T
        jac = np.zeros((S.size + 1, S.size + 1))
        jac[:S.size, :S.size] = -J
        jac[:S.size, S.size] = -1.0
        jac[S.size, :S.size] = 1.0
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        ps = ps + step[:S.size]
    full = np.zeros(W.shape[0])
    full[S] = ps
    return full


def _nonneg_preimage(W: np.ndarray, q: np.ndarray, support: np.ndarray):
    A = W[support].T
    sol, res = nnls(A, q)
    p = np.zeros(W.shape[0])
    p[support] = sol
    return p, res


def _active_set(W: np.ndarray, p: np.ndarray, support: np.ndarray, tol: float):
    """Newton polish on a support, dropping negative weights and adding KKT violators."""
    S = set(int(x) for x in support)
    for _ in range(4 * W.shape[0]):
        if len(S) == 0:
            return None
        idx = np.array(sorted(S))
        pol = _polish(W, p, idx)
        if pol is None:
            return None
        if np.min(pol[idx]) < -1e-12:
            S.discard(int(idx[np.argmin(pol[idx])]))
            continue
        q = pol @ W
        d = _row_divergences(W, q)
        c = float(np.max(d[idx]))
        out = np.setdiff1d(np.arange(W.shape[0]), idx)
        if out.size and np.max(d[out]) > c + max(tol, 1e-13):
            S.add(int(out[np.argmax(d[out])]))
            continue
        return idx, pol
    return None


def solve_capacity(W: Dmc, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER):
    """Blahut-Arimoto warm start, then an active-set Newton solve of the KKT equations.

    Blahut-Arimoto converges slowly on nearly useless channels, so the first
    pass is capped and the Newton step supplies the accuracy; the full
    iteration is the fallback. Returns (C, Q*, P) with P capacity-achieving.
    """
    M = W.matrix
    p, its, gap = _blahut_arimoto(M, max(tol, 1e-10), min(max_iter, WARM_ITER))
    q = p @ M
    d = _row_divergences(M, q)
    I = float(p @ d)
    support = np.flatnonzero(d - I > -max(1e-6, 10 * gap))
    found = _active_set(M, p, support, tol)
    ok = False
    if found is not None:
        S, pol = found
        qp = pol @ M
        dp = _row_divergences(M, qp)
        cp = float(np.max(dp[S]))
        pn, res = _nonneg_preimage(M, qp, S)
        if res < 1e-12 and np.max(dp) - cp < max(tol, 1e-13) and np.min(dp[S]) > cp - 1e-12:
            p, q, ok = pn / pn.sum(), qp, True
    if not ok:
        p, its, gap = _blahut_arimoto(M, tol, max_iter, p0=p)
        if gap >= tol:
            raise CapacityError(f"Blahut-Arimoto did not converge in {max_iter} iterations (gap {gap:.3g})")
        q = p @ M
    q = q / q.sum()
    d = _row_divergences(M, q)
    # C from the dual side: the maximal row divergence against Q*
    c = float(np.max(d))
    return c, Pmf(q), Pmf(p / p.sum())


def _affine_dim(points: np.ndarray, tol: float = 1e-9) -> int:
    if len(points) <= 1:
        return 0
    diffs = points[1:] - points[0]
    s = np.linalg.svd(diffs, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def rank_with_flag(J: np.ndarray, cut: float = RANK_CUT):
    s = np.linalg.svd(J, compute_uv=False) if J.size else np.zeros(0)
    if s.size == 0 or s[0] == 0:
        return 0, False
    rel = s / s[0]
    r = int(np.sum(rel > cut))
    ambiguous = bool(np.any((rel > cut / 10) & (rel < cut * 10)))
    return r, ambiguous


def enumerate_pi_vertices(W: Dmc, q_star, x_dagger, tol: float = 1e-9, cap: int = MAX_VERTICES):
    """Vertices of {P >= 0 : supp P in x_dagger, PW = Q*} via basis enumeration.

    Returns (vertices, overflow).
    """
    M = W.matrix
    q = as_probs(q_star)
    xd = np.asarray(x_dagger)
    A = M[xd].T
    r = np.linalg.matrix_rank(A, tol=1e-10)
    verts = []
    count = 0
    for B in itertools.combinations(range(xd.size), r):
        count += 1
        if count > MAX_BASES:
            return verts, True
        AB = A[:, B]
        if np.linalg.matrix_rank(AB, tol=1e-10) < r:
            continue
        sol, *_ = np.linalg.lstsq(AB, q, rcond=None)
        if np.max(np.abs(AB @ sol - q)) > tol or np.min(sol) < -tol:
            continue
        p = np.zeros(W.nx)
        p[xd[list(B)]] = np.clip(sol, 0.0, None)
        p /= p.sum()
        if not any(np.max(np.abs(p - v)) < 1e-9 for v in verts):
            verts.append(p)
            if len(verts) > cap:
                return verts, True
    return verts, False


@dataclass(frozen=True)
class CapacityAnalysis:
    c: float
    q_star: np.ndarray
    p_opt: np.ndarray
    delta: np.ndarray
    x_dagger: tuple
    pi_vertices: list
    pi_star_vertices: list
    x_star: tuple
    v_tilde: np.ndarray
    v_min: float
    v_max: float
    v_eps: float
    eps: float
    dim_pi: int
    dim_pi_star: int
    tol: float
    degenerate_pi_star: bool = False
    overflow: bool = False
    null_directions: Optional[np.ndarray] = None

    @property
    def pi_star_singleton(self) -> bool:
        return len(self.pi_star_vertices) == 1

    def as_dict(self) -> dict:
        return {
            "c": self.c,
            "q_star": self.q_star.tolist(),
            "delta": self.delta.tolist(),
            "x_dagger": list(self.x_dagger),
            "pi_vertices": [v.tolist() for v in self.pi_vertices],
            "pi_star_vertices": [v.tolist() for v in self.pi_star_vertices],
            "x_star": list(self.x_star),
            "v_min": self.v_min,
            "v_max": self.v_max,
            "v_eps": self.v_eps,
            "dim_pi": self.dim_pi,
            "dim_pi_star": self.dim_pi_star,
            "degenerate_pi_star": self.degenerate_pi_star,
            "overflow": self.overflow,
        }


def capacity_sets(W: Dmc, eps: float, tol: float = DEFAULT_TOL) -> CapacityAnalysis:
    c, q_star, p_opt = solve_capacity(W, tol)
    q = q_star.probs
    d = _row_divergences(W.matrix, q)
    delta = d - c
    x_dagger = np.flatnonzero(delta >= -10 * tol)
    v_tilde = np.array([divergence_moments(W.row(x), q).v if np.isfinite(d[x]) else np.nan
                        for x in range(W.nx)])
    verts, overflow = enumerate_pi_vertices(W, q, x_dagger)
    null_dirs = None
    if overflow or not verts:
        # fall back to one interior point plus the null directions of the slice
        A = W.matrix[x_dagger].T
        null_dirs = null_space(A)
        verts = [p_opt.probs.copy()]
        overflow = True
    vals = np.array([math.fsum(v[x_dagger] * v_tilde[x_dagger]) for v in verts])
    v_min, v_max = float(np.min(vals)), float(np.max(vals))
    if eps == 0.5:
        star_idx = list(range(len(verts)))
        v_eps = v_min
    else:
        target = v_min if eps < 0.5 else v_max
        scale = max(1.0, abs(target))
        star_idx = [i for i, val in enumerate(vals) if abs(val - target) <= 1e-10 * scale]
        v_eps = target
    star = [verts[i] for i in star_idx]
    x_star = sorted(set(int(x) for v in star for x in np.flatnonzero(v > 1e-14)))
    dim_pi = _affine_dim(np.array(verts))
    dim_star = _affine_dim(np.array(star))
    degenerate = eps != 0.5 and len(star) > 1
    return CapacityAnalysis(
        c=c, q_star=q, p_opt=p_opt.probs, delta=delta, x_dagger=tuple(int(x) for x in x_dagger),
        pi_vertices=verts, pi_star_vertices=star, x_star=tuple(x_star), v_tilde=v_tilde,
        v_min=v_min, v_max=v_max, v_eps=v_eps, eps=eps, dim_pi=dim_pi, dim_pi_star=dim_star,
        tol=tol, degenerate_pi_star=degenerate, overflow=overflow, null_directions=null_dirs,
    )


def saddlepoint_check(P0, analysis: CapacityAnalysis, W: Dmc, trials: int = 1000, seed: int = 0) -> dict:
    """Residuals of D(W||Q*|P) <= C <= D(W||Q|P0) over random P and Q."""
    rng = np.random.default_rng(seed)
    c, q = analysis.c, analysis.q_star
    upper = -np.inf
    for P in rng.dirichlet(np.ones(W.nx), size=trials):
        upper = max(upper, conditional_moments(P, q, W).d - c)
    lower = np.inf
    for Q in rng.dirichlet(np.ones(W.ny), size=trials):
        lower = min(lower, conditional_moments(P0, Q, W).d - c)
    at_qstar = conditional_moments(P0, q, W).d - c
    return {
        "max_left_residual": float(upper),
        "min_right_residual": float(lower),
        "at_q_star": float(at_qstar),
        "passed": bool(upper <= 1e-8 and lower >= -1e-8 and abs(at_qstar) <= 1e-10),
    }


def dimensionality(analysis: CapacityAnalysis, j_dagger: np.ndarray, j_star: np.ndarray) -> dict:
    """Dimension identities: dim Pi = |X†| - rank J†, |X*| <= rank J + dim Pi*."""
    xd = list(analysis.x_dagger)
    xs = list(analysis.x_star)
    r_dag, amb1 = rank_with_flag(j_dagger[np.ix_(xd, xd)])
    r_star, amb2 = rank_with_flag(j_star[np.ix_(xs, xs)])
    nullity = len(xd) - r_dag
    checks = {
        "dim_pi_equals_nullity_j_dagger": analysis.dim_pi == nullity,
        "x_star_bound": len(xs) <= r_star + analysis.dim_pi_star,
        "pi_star_within_pi": analysis.dim_pi_star <= analysis.dim_pi,
    }
    return {
        "dim_pi": analysis.dim_pi,
        "dim_pi_star": analysis.dim_pi_star,
        "rank_j_dagger": r_dag,
        "rank_j": r_star,
        "n_x_star": len(xs),
        "rank_ambiguous": bool(amb1 or amb2),
        "checks": checks,
        "passed": all(checks.values()),
    }


def dispersion_range_check(W: Dmc, analysis: CapacityAnalysis, samples: int = 100, seed: int = 0) -> bool:
    """V_min <= V(P;W) <= V_max over random mixtures of Pi vertices."""
    rng = np.random.default_rng(seed)
    V = np.array(analysis.pi_vertices)
    for lam in rng.dirichlet(np.ones(len(V)), size=samples):
        v = channel_moments(lam @ V, W).v_cond
        if v < analysis.v_min - 1e-10 or v > analysis.v_max + 1e-10:
            return False
    return True
