"""Finitely supported probability measures on R^d.

A :class:`DiscreteMeasure` is a weighted point cloud (atoms) standing in for
a probability measure with finite p-th moments.  A :class:`SampledMap` is a
vector field known only on the support of such a measure, the computational
stand-in for a p-integrable map.

All objects are immutable after construction; every operation returns a new
object and is safe to call concurrently.
"""
from __future__ import annotations

import csv
import io
import json
from typing import Callable, Union

import numpy as np

# Weights must sum to one within this tolerance after construction.
WEIGHT_TOL = 1e-12
# Constructor renormalizes sums off by at most this much, rejects beyond.
WEIGHT_RENORM_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class DiscreteMeasure:
    """Finitely supported probability measure: atoms ``points`` with ``weights``.

    Parameters
    ----------
    points : (n, d) array_like
        Atom locations.  A 1-d array of length n is read as n points in R^1.
    weights : (n,) array_like
        Strictly positive masses.  Sums within ``WEIGHT_RENORM_TOL`` of one
        are renormalized; anything farther off is rejected.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        w = np.array(weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise ValueError(
                f"weights must be one per atom: got {w.shape} for {pts.shape[0]} atoms"
            )
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError("weights must be finite and strictly positive")
        s = float(w.sum())
        if abs(s - 1.0) > WEIGHT_RENORM_TOL:
            raise ValueError(f"weights sum to {s!r}, beyond renormalization tolerance")
        if abs(s - 1.0) > WEIGHT_TOL:
            w = w / s
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def dirac(x) -> "DiscreteMeasure":
        """Unit mass at a single point."""
        return DiscreteMeasure(np.atleast_1d(np.asarray(x, dtype=float))[None, :], [1.0])

    @staticmethod
    def uniform(points) -> "DiscreteMeasure":
        """Equal weights on the given points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        n = pts.shape[0]
        return DiscreteMeasure(pts, np.full(n, 1.0 / n))

    def same_support(self, other: "DiscreteMeasure") -> bool:
        return (
            self is other
            or (
                self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights)
            )
        )

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n_atoms}, dim={self.dim})"

    # -- serialization ---------------------------------------------------
    def to_json_obj(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "DiscreteMeasure":
        mu = DiscreteMeasure(obj["points"], obj["weights"])
        if mu.dim != int(obj["dim"]):
            raise ValueError(f"declared dim {obj['dim']} != point dim {mu.dim}")
        return mu

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DiscreteMeasure":
        return DiscreteMeasure.from_json_obj(json.loads(text))

    def to_csv(self) -> str:
        """One row per atom: weight, x_1, ..., x_d."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for w, x in zip(self.weights, self.points):
            writer.writerow([repr(float(w))] + [repr(float(c)) for c in x])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "DiscreteMeasure":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows:
            raise ValueError("empty CSV measure")
        weights = [float(r[0]) for r in rows]
        points = [[float(c) for c in r[1:]] for r in rows]
        return DiscreteMeasure(points, weights)


class SampledMap:
    """A vector field sampled on the support of a measure.

    ``values[i]`` is the field evaluated at ``base.points[i]``.
    """

    __slots__ = ("base", "values")

    def __init__(self, base: DiscreteMeasure, values):
        vals = np.array(values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if vals.shape[0] != base.n_atoms:
            raise ValueError(
                f"values count {vals.shape[0]} != atom count {base.n_atoms}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("sampled values must be finite")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "values", _frozen(vals))

    def __setattr__(self, name, value):
        raise AttributeError("SampledMap is immutable")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def from_callable(base: DiscreteMeasure, f: Callable) -> "SampledMap":
        vals = np.asarray([np.atleast_1d(f(x)) for x in base.points], dtype=float)
        return SampledMap(base, vals)

    @staticmethod
    def zero(base: DiscreteMeasure) -> "SampledMap":
        return SampledMap(base, np.zeros_like(base.points))

    def __repr__(self) -> str:
        return f"SampledMap(n={self.values.shape[0]}, dim={self.dim})"


MapLike = Union[SampledMap, Callable]


def pushforward(mu: DiscreteMeasure, f: MapLike) -> DiscreteMeasure:
    """Image measure of ``mu`` under ``f``: atoms move, weights stay.

    Coincident images are deliberately not merged so that transport plans
    and sampled maps remain index-aligned with the input.
    """
    if isinstance(f, SampledMap):
        if not f.base.same_support(mu):
            raise ValueError("sampled map is not based on this measure")
        imgs = f.values
    else:
        imgs = np.asarray([np.atleast_1d(f(x)) for x in mu.points], dtype=float)
    if imgs.shape != (mu.n_atoms, mu.dim):
        raise ValueError(
            f"image dimension {imgs.shape[1:]} does not match measure dim {mu.dim}"
        )
    return DiscreteMeasure(imgs, mu.weights)


def translate_pushforward(mu: DiscreteMeasure, xi: SampledMap, h: float) -> DiscreteMeasure:
    """The perturbed measure (Id + h*xi)#mu."""
    if not xi.base.same_support(mu):
        raise ValueError("direction field is not based on this measure")
    return DiscreteMeasure(mu.points + h * xi.values, mu.weights)


def moment_p(mu: DiscreteMeasure, p: float) -> float:
    """p-th moment (sum_i w_i |x_i|^p)^(1/p); requires p > 1."""
    if p <= 1.0:
        raise ValueError(f"exponent p must exceed 1, got {p}")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.sum(mu.weights * norms**p) ** (1.0 / p))


def lp_seminorm(mu: DiscreteMeasure, xi: SampledMap, p: float) -> float:
    """L^p(mu) seminorm of a sampled map."""
    if not xi.base.same_support(mu):
        raise ValueError("sampled map is not based on this measure")
    norms = np.linalg.norm(xi.values, axis=1)
    return float(np.sum(mu.weights * norms**p) ** (1.0 / p))


def tail_mass(mu: DiscreteMeasure, R: float, p: float) -> float:
    """Mass-weighted p-th powers beyond radius R: sum_{|x_i| >= R} w_i |x_i|^p."""
    if R < 0:
        raise ValueError("radius must be nonnegative")
    norms = np.linalg.norm(mu.points, axis=1)
    sel = norms >= R
    return float(np.sum(mu.weights[sel] * norms[sel] ** p))


def canonicalize(mu: DiscreteMeasure, tol: float = 0.0) -> DiscreteMeasure:
    """Merge coincident atoms (within ``tol``) and sort lexicographically.

    Only intended for equality testing; index alignment is destroyed.
    """
    order = np.lexsort(mu.points.T[::-1])
    pts = mu.points[order]
    wts = mu.weights[order]
    out_pts = [pts[0]]
    out_wts = [wts[0]]
    for x, w in zip(pts[1:], wts[1:]):
        if np.linalg.norm(x - out_pts[-1]) <= tol:
            out_wts[-1] += w
        else:
            out_pts.append(x)
            out_wts.append(w)
    return DiscreteMeasure(np.asarray(out_pts), np.asarray(out_wts))


def measures_close(a: DiscreteMeasure, b: DiscreteMeasure, tol: float) -> bool:
    """Equality of canonicalized measures, atomwise within ``tol``."""
    ca = canonicalize(a, tol=tol * 0.5)
    cb = canonicalize(b, tol=tol * 0.5)
    if ca.n_atoms != cb.n_atoms or ca.dim != cb.dim:
        return False
    return bool(
        np.all(np.abs(ca.points - cb.points) <= tol)
        and np.all(np.abs(ca.weights - cb.weights) <= tol)
    )
