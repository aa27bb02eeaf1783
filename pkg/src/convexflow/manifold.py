"""Closed-form Riemannian primitives on the three constant-curvature model targets.

Points and tangent vectors are plain numpy arrays.  Sphere points are unit
3-vectors in the ambient space and their tangent vectors are 3-vectors
orthogonal to the base point.  The Poincare disk and flat space use a single
global chart; Poincare tangent vectors are stored in the orthonormal frame
lambda^-1 d/dx_i (lambda = 2 / (1 - |x|^2)), so their Euclidean length is the
Riemannian length.  Every operation broadcasts over leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonUniqueGeodesicError, OutOfRangeError, UnsupportedRepresentationError

FLAT = "flat"
SPHERE2 = "sphere2"
POINCARE = "poincare"

# log on the sphere refuses pairs closer than this to antipodal
SPHERE_LOG_GUARD = 0.99 * math.pi
_UNIT_TOL = 1e-12
_TANGENT_TOL = 1e-10


def _norm(x):
    return np.linalg.norm(x, axis=-1)


def _dot(x, y):
    return np.sum(x * y, axis=-1)


@dataclass(frozen=True)
class ModelManifold:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (FLAT, SPHERE2, POINCARE):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind == FLAT and self.dim < 1:
            raise ValueError("flat dimension must be >= 1")
        if self.kind in (SPHERE2, POINCARE) and self.dim != 2:
            raise ValueError(f"{self.kind} has intrinsic dimension 2")

    # -- construction -------------------------------------------------------

    @classmethod
    def flat(cls, dim: int) -> "ModelManifold":
        return cls(FLAT, dim)

    @classmethod
    def sphere2(cls) -> "ModelManifold":
        return cls(SPHERE2, 2)

    @classmethod
    def poincare_disk(cls) -> "ModelManifold":
        return cls(POINCARE, 2)

    @property
    def ambient_dim(self) -> int:
        """Number of coordinates used to store a point."""
        return 3 if self.kind == SPHERE2 else self.dim

    # -- radii --------------------------------------------------------------

    @property
    def convexity_radius(self) -> float:
        return math.pi / 2 if self.kind == SPHERE2 else math.inf

    @property
    def focal_radius_bound(self) -> float:
        """Lower bound R on the focal radius, valid uniformly over the manifold."""
        return math.pi / 2 if self.kind == SPHERE2 else math.inf

    @property
    def injectivity_radius(self) -> float:
        return math.pi if self.kind == SPHERE2 else math.inf

    # -- validation ---------------------------------------------------------

    def check_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise ValueError(f"{self.kind} points have {self.ambient_dim} coordinates, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("point has non-finite coordinates")
        if self.kind == SPHERE2 and np.any(np.abs(_norm(p) - 1.0) > _UNIT_TOL):
            raise ValueError("sphere points must have unit norm")
        if self.kind == POINCARE and np.any(_norm(p) >= 1.0):
            raise ValueError("Poincare disk points must lie in the open unit disk")
        return p

    def check_tangent(self, p, v) -> np.ndarray:
        """Validate that ``v`` is a tangent vector based at ``p``."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.ambient_dim:
            raise ValueError(f"tangent has shape {v.shape}, expected trailing {self.ambient_dim}")
        if self.kind == SPHERE2:
            off = np.abs(_dot(p, v))
            if np.any(off > _TANGENT_TOL * np.maximum(1.0, _norm(v))):
                raise ValueError("tangent vector is not based at the given sphere point")
        return v

    # -- metric -------------------------------------------------------------

    def conformal_factor(self, p):
        """lambda(p) with metric lambda^2 * (Euclidean chart metric); 1 unless Poincare."""
        p = np.asarray(p, dtype=float)
        if self.kind == POINCARE:
            return 2.0 / (1.0 - _dot(p, p))
        return np.ones(p.shape[:-1])

    def to_frame(self, p, chart_vector):
        """Chart velocity -> components in the orthonormal frame lambda^-1 d/dx_i."""
        return self.conformal_factor(p)[..., None] * np.asarray(chart_vector, dtype=float)

    def to_chart(self, p, frame_vector):
        return np.asarray(frame_vector, dtype=float) / self.conformal_factor(p)[..., None]

    def inner(self, p, u, v):
        return _dot(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def norm(self, p, v):
        return _norm(np.asarray(v, dtype=float))

    def project_tangent(self, p, v):
        """Orthogonal projection of an ambient vector onto T_p."""
        v = np.asarray(v, dtype=float)
        if self.kind == SPHERE2:
            p = np.asarray(p, dtype=float)
            return v - _dot(p, v)[..., None] * p
        return v

    def tangent_basis(self, p) -> np.ndarray:
        """Orthonormal basis of T_p as rows, shape (dim, ambient_dim)."""
        p = np.asarray(p, dtype=float)
        if self.kind == SPHERE2:
            # pick the coordinate axis least aligned with p
            axis = np.zeros(3)
            axis[int(np.argmin(np.abs(p)))] = 1.0
            e1 = axis - np.dot(axis, p) * p
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(p, e1)
            return np.stack([e1, e2])
        return np.eye(self.dim)

    # -- exponential, logarithm, distance ----------------------------------

    def exp(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == SPHERE2:
            self.check_tangent(p, v)
        return self.exp_unchecked(p, v)

    def exp_unchecked(self, p, v):
        """exp without the tangency check; for hot loops whose inputs are tangent by construction."""
        if self.kind == FLAT:
            return p + v
        if self.kind == SPHERE2:
            nv = _norm(v)
            if np.any(nv >= math.pi):
                raise OutOfRangeError(f"|v| = {float(np.max(nv)):.6g} reaches the injectivity radius pi")
            nv = nv[..., None]
            q = np.cos(nv) * p + np.sinc(nv / math.pi) * v
            return q / _norm(q)[..., None]
        return _mobius_add(p, _tanh_half(v))

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == FLAT:
            return q - p
        if self.kind == SPHERE2:
            c = _dot(p, q)
            w = q - c[..., None] * p
            s = _norm(w)
            theta = np.arctan2(s, c)
            if np.any(theta > SPHERE_LOG_GUARD):
                raise NonUniqueGeodesicError("sphere points are (nearly) antipodal; minimal geodesic not unique")
            # theta / sin(theta) written to stay accurate as theta -> 0
            scale = np.where(s > 0, theta / np.where(s > 0, s, 1.0), 1.0)
            return scale[..., None] * w
        m = _mobius_add(-p, q)
        nm = _norm(m)[..., None]
        safe = np.where(nm > 0, nm, 1.0)
        return np.where(nm > 0, 2.0 * np.arctanh(np.minimum(nm, 1.0 - 1e-16)) * m / safe, 0.0)

    def dist(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == FLAT:
            out = _norm(q - p)
        elif self.kind == SPHERE2:
            out = np.arctan2(_norm(np.cross(p, q)), _dot(p, q))
        else:
            den = np.sqrt((1.0 - _dot(p, p)) * (1.0 - _dot(q, q)))
            out = 2.0 * np.arcsinh(_norm(q - p) / den)
        return out if np.ndim(out) else float(out)

    def geodesic_velocity(self, p, v, s: float) -> np.ndarray:
        """Velocity at time s of the geodesic s -> exp_p(s v), in closed form."""
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        n = float(np.linalg.norm(v))
        if self.kind == FLAT or n == 0.0:
            return v.copy()
        u = v / n
        if self.kind == SPHERE2:
            return n * (-math.sin(s * n) * p + math.cos(s * n) * u)
        # d/ds of p (+) tanh(s n / 2) u, by the quotient rule on Mobius addition
        y = math.tanh(s * n / 2.0) * u
        dy = 0.5 * n / math.cosh(s * n / 2.0) ** 2 * u
        xy, yy, xx = float(p @ y), float(y @ y), float(p @ p)
        xdy, ydy = float(p @ dy), float(y @ dy)
        num = (1.0 + 2.0 * xy + yy) * p + (1.0 - xx) * y
        den = 1.0 + 2.0 * xy + xx * yy
        dnum = (2.0 * xdy + 2.0 * ydy) * p + (1.0 - xx) * dy
        dden = 2.0 * xdy + 2.0 * xx * ydy
        c = num / den
        return self.to_frame(c, (dnum * den - num * dden) / den**2)

    def geodesic(self, p, q, s):
        """Point at fraction ``s`` along the minimal geodesic from p to q."""
        s = np.asarray(s, dtype=float)
        v = self.log(p, q)
        return self.exp(np.broadcast_to(p, s.shape + np.shape(p)), s[..., None] * v)

    def christoffel(self, p) -> np.ndarray:
        """Christoffel symbols Gamma[alpha, beta, gamma] of the chart at p."""
        if self.kind == SPHERE2:
            raise UnsupportedRepresentationError(
                "the sphere is stored embedded; use the embedded tension formula instead"
            )
        p = np.asarray(p, dtype=float)
        n = self.dim
        if self.kind == FLAT:
            return np.zeros(p.shape[:-1] + (n, n, n))
        # conformal metric exp(2 phi) delta with phi = log(2 / (1 - |x|^2))
        dphi = 2.0 * p / (1.0 - _dot(p, p))[..., None]
        eye = np.eye(n)
        return (
            np.einsum("ab,...c->...abc", eye, dphi)
            + np.einsum("ac,...b->...abc", eye, dphi)
            - np.einsum("bc,...a->...abc", eye, dphi)
        )

    # -- sampling -----------------------------------------------------------

    def random_unit_tangent(self, p, rng: np.random.Generator) -> np.ndarray:
        basis = self.tangent_basis(p)
        c = rng.standard_normal(self.dim)
        c /= np.linalg.norm(c)
        return c @ basis


def _mobius_add(x, y):
    xy = _dot(x, y)[..., None]
    xx = _dot(x, x)[..., None]
    yy = _dot(y, y)[..., None]
    num = (1.0 + 2.0 * xy + yy) * x + (1.0 - xx) * y
    return num / (1.0 + 2.0 * xy + xx * yy)


def _tanh_half(v):
    # tanh(|v| / 2) v / |v|
    nv = _norm(v)[..., None]
    safe = np.where(nv > 0, nv, 1.0)
    return np.where(nv > 0, np.tanh(nv / 2.0) * v / safe, 0.0)
