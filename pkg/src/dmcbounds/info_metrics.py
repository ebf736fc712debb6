"""Information functionals: divergence moments, channel moments, F_eps and zeta_n."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import ndtri

from .channel_model import ChannelError, Dmc, as_probs


class MetricError(ValueError):
    """A functional is undefined at the given arguments."""


def q_inv(eps: float) -> float:
    """Inverse Gaussian tail, t with Q(t) = eps."""
    if not (0.0 < eps < 1.0):
        raise MetricError(f"eps must lie in (0, 1), got {eps}")
    return float(-ndtri(eps))


def phi(t: float) -> float:
    return math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _dot(w, x) -> float:
    return math.fsum(np.asarray(w, dtype=float) * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class DivergenceMoments:
    d: float
    v: float
    t: float
    s: Optional[float]  # None when v == 0

    @property
    def skew_defined(self) -> bool:
        return self.s is not None


def divergence_moments(P, Q) -> DivergenceMoments:
    p, q = as_probs(P), as_probs(Q)
    if p.shape != q.shape:
        raise MetricError("P and Q have different alphabets")
    sup = p > 0
    if np.any(q[sup] <= 0):
        raise MetricError("P is not absolutely continuous with respect to Q")
    ps = p[sup]
    l = np.log(ps) - np.log(q[sup])
    d = _dot(ps, l)
    c = l - d
    v = max(_dot(ps, c * c), 0.0)
    t = _dot(ps, c * c * c)
    if v <= 1e-300:
        return DivergenceMoments(max(d, 0.0), 0.0, 0.0, None)
    return DivergenceMoments(max(d, 0.0), v, t, t / v ** 1.5)


def renyi_divergence(P, Q, alpha: float) -> float:
    """D_alpha(P||Q) = log(sum Q (P/Q)^alpha)/(alpha-1); the alpha=1 case returns D."""
    p, q = as_probs(P), as_probs(Q)
    sup = p > 0
    if np.any(q[sup] <= 0):
        raise MetricError("P is not absolutely continuous with respect to Q")
    if alpha == 1.0:
        return divergence_moments(p, q).d
    if alpha <= 0:
        raise MetricError("alpha must be positive")
    both = sup & (q > 0)
    terms = alpha * np.log(p[both]) + (1.0 - alpha) * np.log(q[both])
    m = float(np.max(terms))
    return float((m + math.log(math.fsum(np.exp(terms - m)))) / (alpha - 1.0))


def conditional_renyi(W: Dmc, Q, P, alpha: float) -> float:
    """D_alpha(W||Q|P) = sum_x P(x) D_alpha(W_x||Q)."""
    p = as_probs(P)
    vals = [renyi_divergence(W.row(x), Q, alpha) if p[x] > 0 else 0.0 for x in range(W.nx)]
    return _dot(p, vals)


@dataclass(frozen=True)
class ConditionalMoments:
    """D(W||Q|P), V(W||Q|P), T(W||Q|P)."""
    d: float
    v: float
    t: float


def conditional_moments(P, Q, W: Dmc) -> ConditionalMoments:
    p, q = as_probs(P), as_probs(Q)
    dv, vv, tv = [], [], []
    idx = np.flatnonzero(p > 0)
    for x in idx:
        m = divergence_moments(W.row(x), q)
        dv.append(m.d)
        vv.append(m.v)
        tv.append(m.t)
    w = p[idx]
    return ConditionalMoments(_dot(w, dv), _dot(w, vv), _dot(w, tv))


@dataclass(frozen=True)
class ChannelMoments:
    i: float
    v_cond: float
    v_uncond: float
    v_rev: float
    t_cond: float
    t_uncond: float
    s_cond: Optional[float]
    s_uncond: Optional[float]
    rho: Optional[float]
    var_rev_mean: float  # Var over (PW) of D(W̌_Y||P)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def channel_moments(P, W: Dmc) -> ChannelMoments:
    p = as_probs(P)
    if p.size != W.nx:
        raise ChannelError("input distribution does not match channel")
    q = p @ W.matrix
    joint = p[:, None] * W.matrix
    mask = joint > 0
    if np.any(mask & (q[None, :] <= 0)):
        raise MetricError("output distribution vanishes on a reachable output")
    dens = np.zeros_like(W.matrix)
    dens[mask] = np.log(np.broadcast_to(W.matrix, mask.shape)[mask]) - np.log(np.broadcast_to(q, mask.shape)[mask])
    jm = joint[mask]
    dm = dens[mask]
    I = math.fsum(jm * dm)
    c = dm - I
    vu = max(math.fsum(jm * c * c), 0.0)
    tu = math.fsum(jm * c ** 3)

    # conditional on X
    vc = tc = 0.0
    vparts, tparts = [], []
    for x in np.flatnonzero(p > 0):
        row = W.row(x)
        s = row > 0
        lx = dens[x, s]
        dx = math.fsum(row[s] * lx)
        cx = lx - dx
        vparts.append(p[x] * math.fsum(row[s] * cx * cx))
        tparts.append(p[x] * math.fsum(row[s] * cx ** 3))
    vc = max(math.fsum(vparts), 0.0)
    tc = math.fsum(tparts)

    # conditional on Y: i(x,y) - E[i|Y=y] under the reverse channel
    vr_parts, mean_y = [], np.zeros(W.ny)
    qs = q > 0
    for y in np.flatnonzero(qs):
        col = joint[:, y]
        s = col > 0
        post = col[s] / q[y]
        ly = dens[s, y]
        my = math.fsum(post * ly)
        mean_y[y] = my
        vr_parts.append(q[y] * math.fsum(post * (ly - my) ** 2))
    vr = max(math.fsum(vr_parts), 0.0)
    var_mean = max(math.fsum(q[qs] * (mean_y[qs] - I) ** 2), 0.0)

    s_c = tc / vc ** 1.5 if vc > 0 else None
    s_u = tu / vu ** 1.5 if vu > 0 else None
    rho = min(max(1.0 - vr / vu, 0.0), 1.0) if vu > 0 else None
    return ChannelMoments(I, vc, vu, vr, tc, tu, s_c, s_u, rho, var_mean)


def mutual_information(P, W: Dmc) -> float:
    return channel_moments(P, W).i


def cond_variance(P, W: Dmc) -> float:
    return channel_moments(P, W).v_cond


def skew_term(t_over_v: float, eps: float) -> float:
    """Skewness contribution (T/6V)(t_eps^2 - 1) to the O(1) constants.

    Sign follows the standard Cornish-Fisher/Edgeworth convention, verified
    against exact binomial and Neyman-Pearson oracles in the test suite.
    """
    t = q_inv(eps)
    return t_over_v * (t * t - 1.0) / 6.0


def f_eps(moments: Union[DivergenceMoments, ConditionalMoments, tuple], eps: float) -> float:
    """F_eps = t^2/2 + (T/6V)(t^2-1) + log(2 pi V)/2."""
    if isinstance(moments, tuple):
        _, v, t3 = moments
    else:
        v, t3 = moments.v, moments.t
    if not v > 0:
        raise MetricError("F_eps needs a positive variance")
    t = q_inv(eps)
    return 0.5 * t * t + skew_term(t3 / v, eps) + 0.5 * math.log(2.0 * math.pi * v)


def zeta_n(P, Q, W: Dmc, eps: float, n: float) -> float:
    """n D(W||Q|P) - sqrt(n V) t_eps + F_eps; Q=None uses Q = PW."""
    if Q is None:
        Q = as_probs(P) @ W.matrix
    cm = conditional_moments(P, Q, W)
    if not cm.v > 0:
        raise MetricError("conditional variance vanishes")
    t = q_inv(eps)
    return n * cm.d - math.sqrt(n * cm.v) * t + f_eps(cm, eps)


def linf_distance_to_hull(points, vertices) -> float:
    """Smallest delta such that one hull point is within delta of every given point (sup norm)."""
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k, dim = V.shape
    if k == 1:
        return float(np.max(np.abs(pts - V[0])))
    # variables: lambda (k), delta
    nvar = k + 1
    c = np.zeros(nvar)
    c[-1] = 1.0
    A, b = [], []
    for p in pts:
        for j in range(dim):
            row = np.zeros(nvar)
            row[:k] = V[:, j]
            row[-1] = -1.0
            A.append(row.copy())
            b.append(p[j])
            row[:k] = -V[:, j]
            A.append(row)
            b.append(-p[j])
    Aeq = np.zeros((1, nvar))
    Aeq[0, :k] = 1.0
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), A_eq=Aeq, b_eq=[1.0],
                  bounds=[(0, None)] * nvar, method="highs")
    if not res.success:
        raise MetricError("distance LP failed: " + res.message)
    return float(res.x[-1])


def zeta_hat_n(P, Q, W: Dmc, eps: float, n: float, delta_n: float, analysis,
               p_tilde=None) -> tuple[float, str]:
    """Converse payoff. Returns (value, branch) with branch 'near' or 'far'.

    The near branch applies when some P0 in Pi is within delta_n of P (and of
    p_tilde, when given) in sup norm.
    """
    pts = [as_probs(P)] if p_tilde is None else [as_probs(P), as_probs(p_tilde)]
    dist = linf_distance_to_hull(pts, analysis.pi_vertices)
    if dist <= delta_n:
        return zeta_n(P, Q, W, eps, n), "near"
    cm = conditional_moments(P, Q, W)
    val = n * cm.d + math.sqrt(2.0 * n * cm.v / (1.0 - eps)) - math.log((1.0 - eps) / 2.0)
    return val, "far"
