"""Exact and asymptotic Neyman-Pearson tests between product distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

from .channel_model import Dmc, LatticeStructure, as_probs, lattice_of_values
from .info_metrics import phi, q_inv, zeta_hat_n

MERGE_TOL = 1e-11
ATOM_CAP = 10_000_000
V_FLOOR = 1e-12


class NPError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProductTest:
    """Components as (P_i, Q_i, multiplicity) groups; n is the total multiplicity."""
    groups: tuple

    @property
    def n(self) -> int:
        return int(sum(m for _, _, m in self.groups))

    @classmethod
    def iid(cls, P, Q, n: int) -> "ProductTest":
        return cls(((as_probs(P), as_probs(Q), int(n)),))

    @classmethod
    def from_pairs(cls, pairs: Sequence) -> "ProductTest":
        return cls(tuple((as_probs(p), as_probs(q), 1) for p, q in pairs))

    @classmethod
    def composition(cls, counts, W: Dmc, Q) -> "ProductTest":
        """W^n(.|x) against Q^n for any x of the given type (counts per input letter)."""
        q = as_probs(Q)
        groups = [(W.row(x), q, int(c)) for x, c in enumerate(counts) if c > 0]
        return cls(tuple(groups))


def type_counts(P, n: int) -> np.ndarray:
    """Largest-remainder rounding of n P to an n-type."""
    p = as_probs(P)
    raw = n * p
    base = np.floor(raw).astype(int)
    rem = n - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base


@dataclass
class TestMoments:
    d: float
    v: float
    t: float
    s: float
    abs3: float  # averaged absolute third central moment


def _component_moments(p, q):
    sup = p > 0
    l = np.log(p[sup]) - np.log(q[sup])
    w = p[sup]
    d = float(np.dot(w, l))
    c = l - d
    return d, float(np.dot(w, c * c)), float(np.dot(w, c ** 3)), float(np.dot(w, np.abs(c) ** 3))


def test_moments(test: ProductTest) -> TestMoments:
    n = test.n
    acc = np.zeros(4)
    for p, q, m in test.groups:
        if np.any(q[p > 0] <= 0):
            raise NPError("P_i is not absolutely continuous with respect to Q_i")
        acc += m * np.array(_component_moments(p, q))
    d, v, t, a3 = acc / n
    if not v > V_FLOOR:
        raise NPError(f"averaged variance {v:.3g} below floor")
    return TestMoments(d, v, t, t / v ** 1.5, a3)


# ---------------------------------------------------------------------------
# exact distribution of the LLR sum

def _merge(values: np.ndarray, logq: np.ndarray, tol: float = MERGE_TOL):
    order = np.argsort(values, kind="stable")
    v, lq = values[order], logq[order]
    if v.size == 0:
        return v, lq
    scale = np.maximum(1.0, np.abs(v))
    new = np.concatenate(([True], np.diff(v) > tol * scale[1:]))
    idx = np.cumsum(new) - 1
    k = int(idx[-1]) + 1
    out_v = v[new]
    out_q = np.full(k, -np.inf)
    # logsumexp per group
    mx = np.full(k, -np.inf)
    np.maximum.at(mx, idx, lq)
    acc = np.zeros(k)
    np.add.at(acc, idx, np.exp(lq - mx[idx]))
    out_q = mx + np.log(acc)
    return out_v, out_q


def _compositions(m: int, k: int) -> np.ndarray:
    """All nonnegative integer vectors of length k summing to m."""
    if k == 1:
        return np.array([[m]])
    rows = [np.zeros((1, 0), dtype=np.int64)]
    partial = np.zeros(1, dtype=np.int64)
    cur = np.zeros((1, 0), dtype=np.int64)
    for j in range(k - 1):
        reps = m - partial + 1
        total = int(reps.sum())
        if total > ATOM_CAP:
            raise NPError("multinomial enumeration exceeds the atom cap")
        base = np.repeat(np.arange(cur.shape[0]), reps)
        offs = np.arange(total) - np.repeat(np.cumsum(reps) - reps, reps)
        cur = np.column_stack([cur[base], offs])
        partial = partial[base] + offs
    return np.column_stack([cur, m - partial])


def _group_distribution(p, q, m):
    sup = p > 0
    l = np.log(p[sup]) - np.log(q[sup])
    lq = np.log(q[sup])
    # identical LLR values merge before enumeration
    vals, lqs = _merge(l, lq)
    C = _compositions(m, vals.size)
    logmult = gammaln(m + 1) - np.sum(gammaln(C + 1), axis=1)
    return _merge(C @ vals, logmult + C @ lqs)


def _key(p, q):
    """Components with the same LLR law (under Q, on supp P) share a key."""
    sup = p > 0
    pairs = sorted(zip(np.round(np.log(p[sup]) - np.log(q[sup]), 12), np.round(q[sup], 15)))
    return tuple(pairs)


def llr_sum_distribution(test: ProductTest):
    """Atoms of Z = sum log dP_i/dQ_i as (values ascending, log Q-mass, log P-mass).

    Q-mass is restricted to the support of the P-product.
    """
    merged = {}
    for p, q, m in test.groups:
        if np.any(q[p > 0] <= 0):
            raise NPError("P_i is not absolutely continuous with respect to Q_i")
        k = _key(p, q)
        merged[k] = (p, q, merged.get(k, (p, q, 0))[2] + m)
    vals, lq = np.zeros(1), np.zeros(1)
    for p, q, m in merged.values():
        gv, gq = _group_distribution(p, q, m)
        if vals.size * gv.size > ATOM_CAP:
            raise NPError(f"LLR-sum distribution would need {vals.size * gv.size} atoms (cap {ATOM_CAP})")
        vals, lq = _merge((vals[:, None] + gv[None, :]).ravel(), (lq[:, None] + gq[None, :]).ravel())
    return vals, lq, vals + lq


def _llr_lattice(test: ProductTest) -> LatticeStructure:
    vals = []
    for p, q, _ in test.groups:
        sup = p > 0
        vals.extend((np.log(p[sup]) - np.log(q[sup])).tolist())
    return lattice_of_values(vals)


@dataclass
class NPResult:
    log_beta: float
    threshold: float
    randomization: float
    alpha_achieved: float
    lattice: LatticeStructure
    log_q_strict: float   # log Q{Z > threshold}
    log_q_weak: float     # log Q{Z >= threshold}
    p_strict: float
    p_weak: float

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    def as_dict(self) -> dict:
        return {"beta": self.beta, "log_beta": self.log_beta, "threshold": self.threshold,
                "randomization": self.randomization, "alpha_achieved": self.alpha_achieved,
                "lattice": {"kind": self.lattice.kind, "span": self.lattice.span},
                "log_q_strict": self.log_q_strict, "log_q_weak": self.log_q_weak,
                "p_strict": self.p_strict, "p_weak": self.p_weak}


def _lse(x) -> float:
    return float(logsumexp(x)) if len(x) else -math.inf


def _np_from_distribution(vals, lq, lp, alpha, lattice) -> NPResult:
    if not 0.0 < alpha <= 1.0:
        raise NPError("alpha must lie in (0, 1]")
    # P-mass strictly below each atom, accumulated from the bottom for precision
    pm = np.exp(lp - _lse(lp))
    below = np.concatenate(([0.0], np.cumsum(pm)[:-1]))
    eps = 1.0 - alpha
    # threshold atom k: below[k] <= eps < below[k] + pm[k]
    k = int(np.searchsorted(below + pm, eps, side="right"))
    k = min(k, vals.size - 1)
    above = float(math.fsum(pm[k + 1:]))
    rho = (alpha - above) / pm[k]
    rho = min(max(rho, 0.0), 1.0)
    if rho <= 1e-12 and k + 1 < vals.size:
        # alpha sits on a breakpoint: report the deterministic test
        pm_above = pm[k + 1]
        k += 1
        above = float(math.fsum(pm[k + 1:]))
        rho = min(max((alpha - above) / pm_above, 0.0), 1.0)
    lq_above = _lse(lq[k + 1:])
    log_beta = np.logaddexp(lq_above, math.log(rho) + lq[k]) if rho > 0 else lq_above
    return NPResult(float(log_beta), float(vals[k]), float(rho), above + rho * pm[k], lattice,
                    lq_above, float(np.logaddexp(lq_above, lq[k])), above, above + float(pm[k]))


def np_beta_exact(test: ProductTest, alpha: float, dist=None) -> NPResult:
    """beta_alpha by the randomized likelihood-ratio test on the exact LLR-sum law.

    Strictly-above atoms are accepted, the threshold atom is randomized.
    """
    if dist is None:
        dist = llr_sum_distribution(test)
    return _np_from_distribution(*dist, alpha, _llr_lattice(test))


def aligned_alphas(test: ProductTest, dist=None) -> np.ndarray:
    """Breakpoints P{Z >= z} of the piecewise-linear beta_alpha, ascending in alpha."""
    if dist is None:
        dist = llr_sum_distribution(test)
    vals, lq, lp = dist
    pm = np.exp(lp - _lse(lp))
    return np.cumsum(pm[::-1])


def nearest_aligned_alpha(test: ProductTest, alpha: float, dist=None) -> float:
    a = aligned_alphas(test, dist)
    return float(a[int(np.argmin(np.abs(a - alpha)))])


def np_beta_asymptotic(test: ProductTest, alpha: float, lattice: Optional[LatticeStructure] = None) -> dict:
    """log beta from the NP asymptotics.

    a_n = D - sqrt(V/n) t + S sqrt(V)(t^2 - 1)/(6n); the lattice prefactor is
    d e^{-d/2}/(1 - e^{-d}), exact at alpha where the test needs no randomization.
    """
    eps = 1.0 - alpha
    t = q_inv(eps)
    n = test.n
    mo = test_moments(test)
    a_n = mo.d - math.sqrt(mo.v / n) * t + mo.s * math.sqrt(mo.v) * (t * t - 1) / (6 * n)
    base = -n * a_n - 0.5 * t * t - 0.5 * math.log(2 * math.pi * mo.v * n)
    lat = _llr_lattice(test) if lattice is None else lattice
    pref = 0.0
    if lat.is_lattice and lat.span > 0:
        d = lat.span
        pref = math.log(d) - d / 2.0 - math.log(-math.expm1(-d))
    return {"log_beta": base + pref, "a_n": a_n, "prefactor": pref, "lattice": lat.is_lattice,
            "span": lat.span, "d_bar": mo.d, "v_bar": mo.v, "s_bar": mo.s, "t_eps": t}


def np_baselines(test: ProductTest, alpha: float) -> dict:
    """Strassen, Polyanskiy-Poor-Verdu and Chebyshev values for log beta, with validity flags.

    The PPV displays are read with the inverse Gaussian tail Q^{-1} in place of
    Phi^{-1}; their S is the Berry-Esseen ratio with the absolute third moment.
    """
    eps = 1.0 - alpha
    n = test.n
    mo = test_moments(test)
    t = q_inv(eps)
    sv = math.sqrt(n * mo.v)
    # Strassen: |log beta + nD - sqrt(nV) t + log(n)/2| < 140/delta^8
    delta = min(eps, math.sqrt(mo.v), mo.abs3 ** (-1.0 / 3.0) if mo.abs3 > 0 else math.inf)
    delta *= 1 - 1e-12
    half = 140.0 / delta ** 8 if delta > 0 else math.inf
    s_valid = bool(eps > 0 and math.sqrt(n) >= half)
    centre = -n * mo.d + sv * t - 0.5 * math.log(n)
    strassen = {"lower": centre - half, "upper": centre + half, "valid": s_valid,
                "delta": delta, "n_required": half ** 2}
    # PPV normal-approximation bounds on log beta
    b = mo.abs3 / mo.v ** 1.5
    c_alpha = 1.0 / phi(t) if eps > 0 else math.inf
    d_star = 1.0 / (c_alpha * math.sqrt(mo.v))

    def qinv(x):
        return float(-norm.ppf(x))

    arg_lo = alpha - (6 * b + d_star) / math.sqrt(n)
    arg_hi = alpha - 6 * b / math.sqrt(n)
    lo_ok = 0.0 < arg_lo < 1.0
    hi_ok = 0.0 < arg_hi < 1.0
    ppv_lo = (-n * mo.d - sv * qinv(arg_lo) + math.log(d_star) - 0.5 * math.log(n)) if lo_ok else None
    ppv_hi = (-n * mo.d - sv * qinv(arg_hi) - 0.5 * math.log(n)
              + math.log(2 * math.log(2) / math.sqrt(2 * math.pi * mo.v) + 24 * b)) if hi_ok else None
    ppv_asym = (-n * mo.d + sv * t - 0.5 * math.log(n) - math.log(c_alpha * math.sqrt(mo.v))
                - 6 * c_alpha * math.sqrt(mo.v) * b - 1.0)
    ppv = {"lower": ppv_lo, "upper": ppv_hi, "lower_valid": lo_ok, "upper_valid": hi_ok,
           "asymptotic_lower": ppv_asym, "delta_star": d_star}
    cheb = -n * mo.d - math.sqrt(2 * n * mo.v / alpha) + math.log(alpha / 2.0)
    return {"strassen": strassen, "ppv": ppv, "chebyshev_lower": cheb}


def converse_beta_bound(composition, p_tilde, W: Dmc, eps: float, n: int, delta_n: float, analysis) -> dict:
    """Upper bound zeta_hat_n(P, P~W; delta_n) + log(n)/2 on -log beta_{1-eps}(W^n(.|x), Q^n)."""
    p = as_probs(composition)
    pt = as_probs(p_tilde)
    q = pt @ W.matrix
    val, branch = zeta_hat_n(p, q, W, eps, n, delta_n, analysis, p_tilde=pt)
    return {"bound": val + 0.5 * math.log(n), "branch": branch, "q": q}
