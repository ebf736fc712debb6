"""Discrete memoryless channels, probability vectors and lattice detection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

PMF_TOL = 1e-12
LOAD_TOL = 1e-9
LATTICE_TOL = 1e-9
# Largest denominator accepted when deciding that two LLR values are
# commensurable. See the README for why this is smaller than 10**6.
LATTICE_MAX_DEN = 1000


class ChannelError(ValueError):
    """Invalid channel, distribution, or family parameters."""


def _as_pmf_array(p, tol=PMF_TOL) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ChannelError("empty probability vector")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ChannelError("probabilities must be finite and nonnegative")
    if abs(math.fsum(arr) - 1.0) > tol:
        raise ChannelError(f"probabilities sum to {math.fsum(arr)!r}, not 1")
    return arr


@dataclass(frozen=True)
class Pmf:
    probs: np.ndarray
    labels: Optional[tuple] = None

    def __init__(self, probs, labels=None, tol=PMF_TOL):
        arr = _as_pmf_array(probs, tol)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)
        if labels is not None:
            labels = tuple(labels)
            if len(labels) != arr.size:
                raise ChannelError("label count does not match alphabet size")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @classmethod
    def uniform(cls, k: int) -> "Pmf":
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def point(cls, k: int, i: int) -> "Pmf":
        p = np.zeros(k)
        p[i] = 1.0
        return cls(p)


def as_probs(p) -> np.ndarray:
    """Plain float array from a Pmf or array-like, without validation."""
    if isinstance(p, Pmf):
        return p.probs
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class Dmc:
    matrix: np.ndarray
    input_labels: Optional[tuple] = None
    output_labels: Optional[tuple] = None
    family: str = "custom"
    params: tuple = field(default_factory=tuple)

    def __init__(self, matrix, input_labels=None, output_labels=None,
                 family="custom", params=(), tol=PMF_TOL):
        W = np.array(matrix, dtype=float)
        if W.ndim != 2:
            raise ChannelError("channel matrix must be two-dimensional")
        if W.shape[0] < 2 or W.shape[1] < 2:
            raise ChannelError("need at least two inputs and two outputs")
        if np.any(~np.isfinite(W)) or np.any(W < 0):
            raise ChannelError("channel entries must be finite and nonnegative")
        sums = W.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > tol):
            raise ChannelError(f"rows do not sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3g})")
        W.setflags(write=False)
        object.__setattr__(self, "matrix", W)
        object.__setattr__(self, "input_labels", None if input_labels is None else tuple(input_labels))
        object.__setattr__(self, "output_labels", None if output_labels is None else tuple(output_labels))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", tuple(params))

    @property
    def nx(self) -> int:
        return self.matrix.shape[0]

    @property
    def ny(self) -> int:
        return self.matrix.shape[1]

    def row(self, x: int) -> np.ndarray:
        return self.matrix[x]

    def describe(self) -> str:
        if self.family == "custom":
            return "custom"
        return self.family + ":" + ":".join(repr(float(p)) for p in self.params)


@dataclass(frozen=True)
class LatticeStructure:
    kind: str  # "lattice" or "nonlattice"
    span: Optional[float] = None
    offset: Optional[float] = None

    @property
    def is_lattice(self) -> bool:
        return self.kind == "lattice"

    @property
    def degenerate(self) -> bool:
        return self.kind == "lattice" and self.span == 0.0


# ---------------------------------------------------------------------------
# named families

def _check_open_unit(name, v):
    if not (0.0 < v < 1.0):
        raise ChannelError(f"{name} parameter must lie in (0, 1), got {v}")


def make_named_channel(family: str, params: Sequence[float] = ()) -> Dmc:
    """Build a channel from a family name and its parameters.

    Families: bsc(lambda), z(theta), bito(theta), bec(e),
    additive-mod-k(noise pmf), typewriter(k), identity(k), custom(matrix rows).
    """
    fam = family.lower()
    params = [float(p) for p in np.asarray(params, dtype=float).reshape(-1)] if fam != "custom" else params
    if fam == "bsc":
        if len(params) != 1:
            raise ChannelError("bsc takes one parameter")
        lam = params[0]
        _check_open_unit("bsc", lam)
        W = [[1 - lam, lam], [lam, 1 - lam]]
    elif fam == "z":
        if len(params) != 1:
            raise ChannelError("z takes one parameter")
        th = params[0]
        _check_open_unit("z", th)
        W = [[1.0, 0.0], [th, 1 - th]]
    elif fam == "bito":
        if len(params) != 1:
            raise ChannelError("bito takes one parameter")
        th = params[0]
        if not (0.0 < th < 0.5):
            raise ChannelError(f"bito parameter must lie in (0, 1/2), got {th}")
        W = [[1 - 2 * th, th, th], [th, th, 1 - 2 * th]]
    elif fam == "bec":
        if len(params) != 1:
            raise ChannelError("bec takes one parameter")
        e = params[0]
        _check_open_unit("bec", e)
        W = [[1 - e, e, 0.0], [0.0, e, 1 - e]]
    elif fam in ("additive-mod-k", "additive") or fam.startswith("additive-mod-"):
        noise = np.asarray(params, dtype=float)
        suffix = fam[len("additive-mod-"):] if fam.startswith("additive-mod-") else "k"
        if suffix != "k" and (not suffix.isdigit() or int(suffix) != noise.size):
            raise ChannelError(f"{family} needs a noise pmf with {suffix} entries")
        if noise.size < 2:
            raise ChannelError("additive-mod-k needs a noise pmf with at least two entries")
        _as_pmf_array(noise, LOAD_TOL)
        noise = noise / noise.sum()
        k = noise.size
        W = [np.roll(noise, x) for x in range(k)]
    elif fam == "typewriter":
        k = int(params[0]) if params else 26
        if k < 3 or k != (params[0] if params else 26):
            raise ChannelError("typewriter takes an integer alphabet size >= 3")
        noise = np.zeros(k)
        noise[:2] = 0.5
        W = [np.roll(noise, x) for x in range(k)]
    elif fam in ("identity", "noiseless"):
        k = int(params[0]) if params else 2
        if k < 2:
            raise ChannelError("identity channel needs at least two symbols")
        W = np.eye(k)
    elif fam == "custom":
        try:
            W = np.array(params, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ChannelError("custom channel needs a numeric matrix") from exc
        return Dmc(W, family="custom", tol=LOAD_TOL)
    else:
        raise ChannelError(f"unknown channel family {family!r}")
    return Dmc(np.asarray(W, dtype=float), family=fam, params=tuple(params))


def parse_channel_spec(spec: str) -> Dmc:
    """Parse 'family:p1:p2...' (commas also separate parameters) or a path to a JSON channel file."""
    if spec.endswith(".json") or spec.startswith("{"):
        text = spec if spec.startswith("{") else open(spec, encoding="utf-8").read()
        return channel_from_json(json.loads(text))
    fam, _, rest = spec.partition(":")
    try:
        vals = [float(p) for p in rest.replace(",", ":").split(":") if p != ""]
    except ValueError as exc:
        raise ChannelError(f"bad channel parameters in {spec!r}") from exc
    return make_named_channel(fam, vals)


def channel_from_json(doc: dict) -> Dmc:
    fam = doc.get("family")
    if fam is None:
        raise ChannelError("channel document needs a 'family' field")
    if fam == "custom":
        if "W" not in doc:
            raise ChannelError("custom channel document needs a 'W' matrix")
        return make_named_channel("custom", doc["W"])
    return make_named_channel(fam, doc.get("params", []))


def channel_to_json(W: Dmc) -> dict:
    if W.family == "custom":
        return {"family": "custom", "W": W.matrix.tolist()}
    return {"family": W.family, "params": list(W.params)}


# ---------------------------------------------------------------------------
# basic operations

def output_distribution(P, W: Dmc) -> Pmf:
    p = as_probs(P)
    if p.size != W.nx:
        raise ChannelError(f"input distribution has {p.size} entries, channel has {W.nx} inputs")
    q = p @ W.matrix
    # renormalize away the last ulp so the result passes Pmf validation exactly
    return Pmf(q / math.fsum(q))


def reverse_channel(P, W: Dmc, restrict: bool = False) -> Dmc:
    """Posterior W̌(x|y) = W(y|x)P(x)/(PW)(y).

    With restrict=True, outputs of zero probability are dropped; otherwise
    they raise.
    """
    p = as_probs(P)
    q = as_probs(output_distribution(p, W))
    keep = q > 0
    if not np.all(keep) and not restrict:
        raise ChannelError("output distribution has zero mass; pass restrict=True")
    joint = (p[:, None] * W.matrix)[:, keep]
    R = (joint / q[keep]).T
    R = R / R.sum(axis=1, keepdims=True)
    return Dmc(R, family="reverse")


def llr_values(W: Dmc, Q) -> np.ndarray:
    """Distinct-by-position values log(W(y|x)/Q(y)) over pairs with W(y|x) > 0."""
    q = as_probs(Q)
    mask = W.matrix > 0
    if np.any(mask & (q[None, :] <= 0)):
        raise ChannelError("Q must be positive wherever W(y|x) > 0")
    rows, cols = np.nonzero(mask)
    return np.log(W.matrix[rows, cols]) - np.log(q[cols])


def _small_rational(r: float, tol: float, max_den: int) -> Optional[Fraction]:
    """First continued-fraction convergent of r within tol, if q <= max_den."""
    h0, h1 = 0, 1
    k0, k1 = 1, 0
    x = r
    for _ in range(64):
        a = math.floor(x)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if k1 > max_den:
            return None
        if abs(r - h1 / k1) <= tol:
            return Fraction(h1, k1)
        frac = x - a
        if frac < 1e-15:
            return None
        x = 1.0 / frac
    return None


def lattice_of_values(values, tol: float = LATTICE_TOL, max_den: int = LATTICE_MAX_DEN) -> LatticeStructure:
    """Classify a finite set of reals as lattice (maximal span) or nonlattice."""
    v = np.unique(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ChannelError("no values to classify")
    # collapse values that agree within tol
    keep = np.concatenate(([True], np.diff(v) > tol * max(1.0, float(np.max(np.abs(v))))))
    v = v[keep]
    lo = float(v[0])
    if v.size == 1:
        return LatticeStructure("lattice", 0.0, lo)
    diffs = v[1:] - lo
    base = float(diffs[0])
    fracs = []
    for d in diffs:
        fr = _small_rational(float(d) / base, tol, max_den)
        if fr is None:
            return LatticeStructure("nonlattice")
        fracs.append(fr)
    den = 1
    for fr in fracs:
        den = den * fr.denominator // math.gcd(den, fr.denominator)
    ints = [int(fr * den) for fr in fracs]
    g = 0
    for k in ints:
        g = math.gcd(g, k)
    span = base * g / den
    # final check on the absolute residuals
    k = np.round(diffs / span)
    if np.max(np.abs(diffs - k * span)) > tol * max(1.0, float(np.max(np.abs(diffs)))):
        return LatticeStructure("nonlattice")
    return LatticeStructure("lattice", float(span), lo)


def detect_lattice(W: Dmc, Q, tol: float = LATTICE_TOL, max_den: int = LATTICE_MAX_DEN) -> LatticeStructure:
    return lattice_of_values(llr_values(W, Q), tol, max_den)


def is_weakly_symmetric(W: Dmc, tol: float = PMF_TOL):
    """Rows are permutations of each other and column sums are equal.

    Returns (flag, witnesses) where witnesses[x] maps row 0 onto row x.
    """
    M = W.matrix
    order0 = np.argsort(M[0], kind="stable")
    sorted0 = M[0][order0]
    witnesses = []
    for x in range(W.nx):
        ox = np.argsort(M[x], kind="stable")
        if np.max(np.abs(M[x][ox] - sorted0)) > tol:
            return False, None
        perm = np.empty(W.ny, dtype=int)
        perm[order0] = ox
        witnesses.append(perm)
    cs = M.sum(axis=0)
    if np.max(cs) - np.min(cs) > tol * max(1.0, float(np.max(cs))):
        return False, None
    return True, witnesses
