"""Compact locally convex bodies on a model manifold.

A body is a finite intersection of geodesic balls (and, on flat targets,
half-spaces).  Nearest-point projection uses Dykstra's cyclic projection on
flat targets and exact active-set enumeration on the curved surfaces, where
the boundary is a union of circular arcs meeting at finitely many vertices.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, OutOfTubeError, SolverFailureError
from .manifold import FLAT, POINCARE, SPHERE2, ModelManifold

MEMBERSHIP_SLACK = 1e-12
ACTIVITY_TOL = 1e-8
PROJECTION_TOL = 1e-10
MAX_SWEEPS = 10_000
_VERTEX_SLACK = 1e-10
_TUBE_SLACK = 1e-12
_PROBE_PARAMS = np.arange(1, 33) / 33.0


@dataclass(frozen=True)
class GeodesicBall:
    center: np.ndarray
    radius: float

    def value(self, M: ModelManifold, p):
        """Signed constraint value: <= 0 inside the ball."""
        return M.dist(self.center, p) - self.radius

    def outward_normal(self, M: ModelManifold, p) -> np.ndarray:
        v = -M.log(p, self.center)
        return v / M.norm(p, v)

    def project(self, M: ModelManifold, p) -> np.ndarray:
        if self.value(M, p) <= 0:
            return np.asarray(p, dtype=float)
        v = M.log(self.center, p)
        return M.exp(self.center, self.radius * v / M.norm(self.center, v))

    def boundary_point(self, M: ModelManifold, direction) -> np.ndarray:
        """Boundary point in the direction of a unit tangent at the center."""
        return M.exp(self.center, self.radius * np.asarray(direction, dtype=float))


@dataclass(frozen=True)
class HalfSpace:
    """The flat half-space {x : <normal, x> <= offset} with unit normal."""

    normal: np.ndarray
    offset: float

    def value(self, M: ModelManifold, p):
        return np.asarray(p, dtype=float) @ self.normal - self.offset

    def outward_normal(self, M: ModelManifold, p) -> np.ndarray:
        return np.array(self.normal, dtype=float)

    def project(self, M: ModelManifold, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        excess = p @ self.normal - self.offset
        return p - max(excess, 0.0) * self.normal


def ball(M: ModelManifold, center, radius: float) -> GeodesicBall:
    return GeodesicBall(M.check_point(np.array(center, dtype=float)), float(radius))


def halfspace(normal, offset: float) -> HalfSpace:
    n = np.array(normal, dtype=float)
    length = np.linalg.norm(n)
    if length == 0:
        raise ValueError("half-space normal must be nonzero")
    return HalfSpace(n / length, float(offset) / length)


@dataclass(frozen=True)
class TangentCone:
    apex: np.ndarray
    active_normals: tuple
    manifold: ModelManifold

    @property
    def is_full(self) -> bool:
        return len(self.active_normals) == 0

    def contains(self, w, tol: float = 0.0) -> bool:
        return all(self.manifold.inner(self.apex, w, g) <= tol for g in self.active_normals)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """k unit directions in the cone, by rejection from the unit tangent circle."""
        out = []
        for _ in range(1000 * k):
            w = self.manifold.random_unit_tangent(self.apex, rng)
            if self.contains(w):
                out.append(w)
                if len(out) == k:
                    return np.array(out)
        raise SolverFailureError("tangent cone too thin to sample")


@dataclass(frozen=True)
class Hyperplane:
    """Hyperplane at ``foot`` orthogonal to the unit ``normal``.

    The body's tangent cone lies in the closed side {<w, normal> >= 0}; the
    exterior point the plane was built from lies strictly on the other side.
    """

    foot: np.ndarray
    normal: np.ndarray
    manifold: ModelManifold

    def side(self, w) -> float:
        return float(self.manifold.inner(self.foot, w, self.normal))

    def closed_halfspace_contains(self, w, tol: float = 1e-10) -> bool:
        return self.side(w) >= -tol

    def basis(self) -> np.ndarray:
        """Orthonormal basis of the hyperplane (rows)."""
        M = self.manifold
        rows = []
        for e in M.tangent_basis(self.foot):
            e = e - M.inner(self.foot, e, self.normal) * self.normal
            for r in rows:
                e = e - M.inner(self.foot, e, r) * r
            n = M.norm(self.foot, e)
            if n > 1e-8:
                rows.append(e / n)
            if len(rows) == M.dim - 1:
                break
        return np.array(rows)


@dataclass(frozen=True)
class ConvexBody:
    manifold: ModelManifold
    constraints: tuple
    epsilon: float
    witness: np.ndarray = field(default=None)
    validated: bool = True

    def __post_init__(self):
        M = self.manifold
        if not self.constraints:
            raise ValueError("a body needs at least one constraint")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for c in self.constraints:
            if isinstance(c, HalfSpace) and M.kind != FLAT:
                raise ValueError("half-spaces are only available on flat targets")
            if isinstance(c, GeodesicBall) and not c.radius > 0:
                raise ValueError("ball radius must be positive")
        if self.validated:
            self._validate_radii()
        if not any(isinstance(c, GeodesicBall) for c in self.constraints):
            _check_polytope_bounded(self.constraints, M.dim)
        witness = self.witness
        if witness is None:
            witness = self._find_witness()
        witness = M.check_point(np.asarray(witness, dtype=float))
        if not self.contains(witness):
            raise ValueError("witness point does not satisfy every constraint (Y would be empty)")
        object.__setattr__(self, "witness", witness)

    def _validate_radii(self):
        M = self.manifold
        radii = [c.radius for c in self.constraints if isinstance(c, GeodesicBall)]
        for r in radii:
            if not r < M.convexity_radius:
                raise ValueError(
                    f"ball radius {r} is not below the convexity radius {M.convexity_radius:.6g}"
                )
        if not self.epsilon < M.focal_radius_bound:
            raise ValueError(f"epsilon {self.epsilon} is not below the focal radius bound")
        if M.kind == SPHERE2 and radii and not max(radii) + self.epsilon < math.pi / 2:
            raise ValueError(
                f"max ball radius + epsilon = {max(radii) + self.epsilon:.6g} must stay below pi/2"
            )

    def _find_witness(self):
        M = self.manifold
        balls = [c for c in self.constraints if isinstance(c, GeodesicBall)]
        seed = balls[0].center if balls else np.zeros(M.ambient_dim)
        if self.contains(seed):
            return seed
        try:
            return _nearest_point(self, seed)
        except SolverFailureError as exc:
            raise ValueError("constraints have empty intersection") from exc

    # -- membership and distance -------------------------------------------

    def constraint_values(self, p) -> np.ndarray:
        return np.stack([np.asarray(c.value(self.manifold, p), dtype=float) for c in self.constraints], axis=-1)

    def contains(self, p, slack: float = MEMBERSHIP_SLACK):
        out = np.all(self.constraint_values(p) <= slack, axis=-1)
        return bool(out) if np.ndim(out) == 0 else out

    def _tube_lower_bound(self, p) -> float:
        return float(np.max(self.constraint_values(p)))


def contains(Y: ConvexBody, p) -> bool:
    return Y.contains(p)


def project(Y: ConvexBody, p, check_tube: bool = True) -> np.ndarray:
    """Unique nearest point of Y to p, for p in the tube B(Y, epsilon)."""
    p = np.asarray(p, dtype=float)
    if Y.contains(p):
        return p.copy()
    if check_tube and Y._tube_lower_bound(p) > Y.epsilon + _TUBE_SLACK:
        raise OutOfTubeError(f"point is farther than epsilon = {Y.epsilon} from Y")
    q = _nearest_point(Y, p)
    if check_tube and Y.manifold.dist(p, q) > Y.epsilon + _TUBE_SLACK:
        raise OutOfTubeError(f"point is farther than epsilon = {Y.epsilon} from Y")
    return q


def distance(Y: ConvexBody, p, check_tube: bool = True) -> float:
    p = np.asarray(p, dtype=float)
    if Y.contains(p):
        return 0.0
    return float(Y.manifold.dist(p, project(Y, p, check_tube=check_tube)))


def distances(Y: ConvexBody, points, check_tube: bool = True) -> np.ndarray:
    """distance(Y, .) over an array of points; only exterior points are projected."""
    points = np.asarray(points, dtype=float)
    inside = np.atleast_1d(Y.contains(points))
    out = np.zeros(len(points))
    for i in np.flatnonzero(~inside):
        out[i] = distance(Y, points[i], check_tube=check_tube)
    return out


def _nearest_point(Y: ConvexBody, p) -> np.ndarray:
    if Y.manifold.kind == FLAT:
        return _dykstra(Y, p)
    return _enumerate_active_sets(Y, p)


def _dykstra(Y: ConvexBody, p) -> np.ndarray:
    M = Y.manifold
    x = np.array(p, dtype=float)
    increments = [np.zeros_like(x) for _ in Y.constraints]
    for _ in range(MAX_SWEEPS):
        change = 0.0
        for i, c in enumerate(Y.constraints):
            y = c.project(M, x + increments[i])
            new_inc = x + increments[i] - y
            change += float(np.sum((new_inc - increments[i]) ** 2))
            increments[i] = new_inc
            x = y
        if change < PROJECTION_TOL**2:
            return _polish(Y, p, x)
    raise SolverFailureError(f"cyclic projection did not converge in {MAX_SWEEPS} sweeps")


def _polish(Y: ConvexBody, p, x) -> np.ndarray:
    """Snap a Dykstra iterate onto the exact projection for its active set.

    Only pure half-space active sets and a lone active ball have closed forms;
    anything else keeps the iterate.
    """
    M = Y.manifold
    active = [c for c, v in zip(Y.constraints, Y.constraint_values(x)) if v >= -ACTIVITY_TOL]
    if not active:
        return x
    if len(active) == 1 and isinstance(active[0], GeodesicBall):
        q = active[0].project(M, p)
    elif all(isinstance(c, HalfSpace) for c in active):
        N = np.array([c.normal for c in active])
        b = np.array([c.offset for c in active])
        lam, *_ = np.linalg.lstsq(N @ N.T, N @ p - b, rcond=None)
        if np.any(lam < -1e-9):
            return x
        q = p - N.T @ lam
    else:
        return x
    if Y.contains(q) and np.linalg.norm(q - x) < 1e-6:
        return q
    return x


def _enumerate_active_sets(Y: ConvexBody, p) -> np.ndarray:
    """Exact projection onto an intersection of balls on a curved surface.

    The minimiser has one or two active constraints: either it is the radial
    projection onto a single ball, or a vertex where two boundary circles cross.
    """
    M = Y.manifold
    balls = Y.constraints
    candidates = [b.project(M, p) for b in balls]
    for b1, b2 in itertools.combinations(balls, 2):
        candidates.extend(_circle_intersections(M, b1, b2))
    best, best_d = None, math.inf
    for q in candidates:
        if Y.contains(q, slack=_VERTEX_SLACK):
            d = M.dist(p, q)
            if d < best_d:
                best, best_d = q, d
    if best is None:
        raise SolverFailureError("no feasible candidate; constraints may have empty intersection")
    return best


def _circle_intersections(M: ModelManifold, b1: GeodesicBall, b2: GeodesicBall) -> list:
    if M.kind == SPHERE2:
        c1, c2 = b1.center, b2.center
        g = float(c1 @ c2)
        det = 1.0 - g * g
        if det < 1e-14:
            return []
        k1, k2 = math.cos(b1.radius), math.cos(b2.radius)
        alpha = (k1 - g * k2) / det
        beta = (k2 - g * k1) / det
        base = alpha * c1 + beta * c2
        gamma2 = 1.0 - float(base @ base)
        if gamma2 < 0:
            return []
        n = np.cross(c1, c2)
        n /= np.linalg.norm(n)
        gamma = math.sqrt(gamma2)
        out = []
        for s in (1.0, -1.0):
            q = base + s * gamma * n
            out.append(q / np.linalg.norm(q))
        return out
    if M.kind == POINCARE:
        e1, e2 = _euclidean_circle(b1), _euclidean_circle(b2)
        return [q for q in _plane_circle_intersections(*e1, *e2) if q @ q < 1.0]
    raise ValueError("vertex enumeration is only used on curved surfaces")


def _euclidean_circle(b: GeodesicBall):
    # hyperbolic circles are Euclidean circles in the disk model
    c = b.center
    cc = float(c @ c)
    k = (math.cosh(b.radius) - 1.0) * (1.0 - cc) / 2.0
    center = c / (1.0 + k)
    r2 = cc / (1.0 + k) ** 2 - (cc - k) / (1.0 + k)
    return center, math.sqrt(max(r2, 0.0))


def _plane_circle_intersections(a, ra, b, rb) -> list:
    d = float(np.linalg.norm(b - a))
    if d < 1e-15 or d > ra + rb or d < abs(ra - rb):
        return []
    x = (d * d + ra * ra - rb * rb) / (2 * d)
    h2 = ra * ra - x * x
    h = math.sqrt(max(h2, 0.0))
    u = (b - a) / d
    perp = np.array([-u[1], u[0]])
    mid = a + x * u
    return [mid + h * perp, mid - h * perp]


def _check_polytope_bounded(constraints, dim: int) -> None:
    from scipy.optimize import linprog

    A = np.array([c.normal for c in constraints])
    b = np.array([c.offset for c in constraints])
    for k in range(dim):
        for sign in (1.0, -1.0):
            cost = np.zeros(dim)
            cost[k] = -sign
            res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * dim, method="highs")
            if res.status == 3:
                raise ValueError("half-space intersection is unbounded; Y must be compact")
            if res.status == 2:
                raise ValueError("half-space intersection is empty")


# -- cones, supporting planes, retraction -----------------------------------


def tangent_cone(Y: ConvexBody, p) -> TangentCone:
    p = np.asarray(p, dtype=float)
    if not Y.contains(p):
        raise DegenerateInputError("tangent cones are only defined at points of Y")
    values = Y.constraint_values(p)
    normals = tuple(
        c.outward_normal(Y.manifold, p) for c, v in zip(Y.constraints, values) if v >= -ACTIVITY_TOL
    )
    return TangentCone(p, normals, Y.manifold)


def supporting_hyperplane(Y: ConvexBody, y) -> Hyperplane:
    M = Y.manifold
    y = np.asarray(y, dtype=float)
    d = distance(Y, y)
    if d <= ACTIVITY_TOL:
        raise DegenerateInputError("supporting hyperplanes are built from points outside Y")
    foot = project(Y, y)
    back = M.log(foot, y)
    return Hyperplane(foot, -back / M.norm(foot, back), M)


def retract(Y: ConvexBody, y, s: float) -> np.ndarray:
    """Deformation retraction h(y, s) sliding y along its geodesic to the projection."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("retraction parameter must lie in [0, 1]")
    M = Y.manifold
    y = np.asarray(y, dtype=float)
    target = project(Y, y)
    if s == 1.0:
        return target
    return M.exp(y, s * M.log(y, target))


# -- sampling and probes ----------------------------------------------------


def sample_boundary(Y: ConvexBody, k: int, rng: np.random.Generator) -> np.ndarray:
    """Approximately k points of the boundary of Y (rejection per constraint)."""
    M = Y.manifold
    lo, hi = _bounding_box(Y)
    out = []
    for _ in range(200):
        for c in Y.constraints:
            if isinstance(c, GeodesicBall):
                q = c.boundary_point(M, M.random_unit_tangent(c.center, rng))
            else:
                x = rng.uniform(lo, hi)
                q = x - (x @ c.normal - c.offset) * c.normal
            if Y.contains(q, slack=1e-10):
                out.append(q)
            if len(out) == k:
                return np.array(out)
    if not out:
        raise SolverFailureError("could not sample the boundary of Y")
    return np.array(out)


def sample_points(Y: ConvexBody, k: int, rng: np.random.Generator, boundary_fraction: float = 0.0) -> np.ndarray:
    """k points of Y; a fraction of them drawn from the boundary."""
    M = Y.manifold
    n_boundary = int(round(boundary_fraction * k))
    pts = list(sample_boundary(Y, n_boundary, rng)) if n_boundary else []
    balls = [c for c in Y.constraints if isinstance(c, GeodesicBall)]
    lo, hi = _bounding_box(Y)
    tries = 0
    while len(pts) < k:
        tries += 1
        if tries > 1000 * k:
            raise SolverFailureError("rejection sampling of Y failed")
        if balls:
            b = min(balls, key=lambda c: c.radius)
            u = M.random_unit_tangent(b.center, rng)
            q = M.exp(b.center, b.radius * math.sqrt(rng.uniform()) * u)
        else:
            q = rng.uniform(lo, hi)
        if Y.contains(q):
            pts.append(q)
    return np.array(pts[:k])


def sample_tube(Y: ConvexBody, k: int, rng: np.random.Generator, max_fraction: float = 0.95) -> np.ndarray:
    """k points of B(Y, epsilon) minus Y, pushed off the boundary along cone normals."""
    M = Y.manifold
    out = []
    for b in sample_boundary(Y, 4 * k, rng):
        cone = tangent_cone(Y, b)
        if cone.is_full:
            continue
        weights = rng.dirichlet(np.ones(len(cone.active_normals)))
        n = sum(w * g for w, g in zip(weights, cone.active_normals))
        n = n / M.norm(b, n)
        out.append(M.exp(b, rng.uniform(0.05, max_fraction) * Y.epsilon * n))
        if len(out) == k:
            break
    return np.array(out)


def _bounding_box(Y: ConvexBody):
    M = Y.manifold
    if M.kind != FLAT:
        return -np.ones(M.ambient_dim), np.ones(M.ambient_dim)
    balls = [c for c in Y.constraints if isinstance(c, GeodesicBall)]
    if balls:
        b = min(balls, key=lambda c: c.radius)
        return b.center - b.radius, b.center + b.radius
    from scipy.optimize import linprog

    A = np.array([c.normal for c in Y.constraints])
    rhs = np.array([c.offset for c in Y.constraints])
    lo, hi = np.empty(M.dim), np.empty(M.dim)
    for j in range(M.dim):
        cost = np.zeros(M.dim)
        cost[j] = 1.0
        lo[j] = linprog(cost, A_ub=A, b_ub=rhs, bounds=[(None, None)] * M.dim, method="highs").fun
        hi[j] = -linprog(-cost, A_ub=A, b_ub=rhs, bounds=[(None, None)] * M.dim, method="highs").fun
    return lo, hi


def strong_convexity_probe(Y: ConvexBody, trials: int, rng: np.random.Generator | None = None) -> bool:
    """Check that minimal geodesics between sampled pairs of Y stay in Y."""
    from .errors import NonUniqueGeodesicError

    rng = np.random.default_rng(0) if rng is None else rng
    M = Y.manifold
    pts = sample_points(Y, 2 * trials, rng, boundary_fraction=0.75)
    order = rng.permutation(len(pts))
    for i, j in zip(order[:trials], order[trials:]):
        p, q = pts[i], pts[j]
        try:
            path = M.geodesic(p, q, _PROBE_PARAMS)
        except NonUniqueGeodesicError:
            return False
        if not np.all(Y.contains(path, slack=1e-9)):
            return False
    return True
