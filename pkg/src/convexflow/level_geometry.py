"""Distance to exponential images of hyperplanes and the Hessian of that distance.

``LevelSetPatch`` is the embedded hypersurface exp_q(H ∩ B(0, delta)) for a
hyperplane H = v^⊥ at q.  The distance to it is found by Newton iteration on
the patch parameterisation; its Hessian restricted to a level set is the
second fundamental form whose minimum eigenvalue controls the flow constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfPatchError, SolverFailureError
from .manifold import FLAT, SPHERE2, ModelManifold

HESSIAN_STEP = 1e-4
C0_SAFETY = 1.25
_JACOBIAN_STEP = 1e-6
_NEWTON_TOL = 1e-14
_NEWTON_MAX = 60
_WIDTH_SLACK = 1e-6
# below this distance the gradient is read off the patch normal instead of log


def default_delta(M: ModelManifold) -> float:
    """Patch radius: 0.9 R, with R replaced by pi when the focal bound is infinite."""
    R = M.focal_radius_bound
    return 0.9 * (R if math.isfinite(R) else math.pi)


@dataclass(frozen=True)
class LevelSetPatch:
    manifold: ModelManifold
    base: np.ndarray
    normal: np.ndarray
    delta: float = None
    width: float = None
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = self.manifold
        base = M.check_point(np.asarray(self.base, dtype=float))
        normal = M.check_tangent(base, np.asarray(self.normal, dtype=float))
        n = M.norm(base, normal)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("patch normal must have unit length")
        delta = default_delta(M) if self.delta is None else float(self.delta)
        if not 0 < delta < M.focal_radius_bound:
            raise ValueError(f"patch radius {delta} must lie in (0, R)")
        width = delta if self.width is None else float(self.width)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "normal", normal / n)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "basis", _complement(M, base, normal / n))

    @property
    def codim_params(self) -> int:
        return self.manifold.dim - 1

    def point(self, s) -> np.ndarray:
        return self.manifold.exp(self.base, np.asarray(s, dtype=float) @ self.basis)

    def tangents(self, s) -> np.ndarray:
        """Tangent vectors d point / d s_k at the patch point, as rows."""
        M = self.manifold
        s = np.asarray(s, dtype=float)
        if M.kind == FLAT:
            return self.basis.copy()
        # curved targets are surfaces: the patch is the geodesic through base along basis[0]
        return M.geodesic_velocity(self.base, self.basis[0], float(s[0]))[None, :]

    def unit_normal(self, s) -> np.ndarray:
        """Unit normal of the patch at point(s), oriented like ``normal`` at the base."""
        M = self.manifold
        x = self.point(s)
        nu = M.project_tangent(x, self.normal)
        for t in _orthonormalize(M, x, self.tangents(s)):
            nu = nu - M.inner(x, nu, t) * t
        return nu / M.norm(x, nu)

    def _gradient(self, s, z):
        M = self.manifold
        x = self.point(s)
        return -np.array([M.inner(x, M.log(x, z), t) for t in self.tangents(s)])

    def foot(self, z) -> np.ndarray:
        """Patch parameter of the nearest point to z (Newton on the squared distance)."""
        M = self.manifold
        z = np.asarray(z, dtype=float)
        s = self.basis @ M.log(self.base, z) if self.codim_params else np.zeros(0)
        if self.codim_params == 0:
            return s
        obj = lambda u: 0.5 * M.dist(z, self.point(u)) ** 2
        f = obj(s)
        for _ in range(_NEWTON_MAX):
            g = self._gradient(s, z)
            J = np.empty((self.codim_params, self.codim_params))
            for k in range(self.codim_params):
                e = np.zeros_like(s)
                e[k] = _JACOBIAN_STEP
                J[:, k] = (self._gradient(s + e, z) - self._gradient(s - e, z)) / (2 * _JACOBIAN_STEP)
            try:
                step = -np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                step = -g
            lam = 1.0
            while True:
                trial = s + lam * step
                f_trial = obj(trial)
                if f_trial <= f + 1e-30 or lam < 1e-8:
                    break
                lam *= 0.5
            s, f = trial, f_trial
            if np.linalg.norm(lam * step) < _NEWTON_TOL:
                break
        else:
            if np.linalg.norm(self._gradient(s, z)) > 1e-9:
                raise SolverFailureError("patch foot iteration did not converge")
        if np.linalg.norm(s) >= self.delta:
            raise OutOfPatchError("nearest point lies outside the patch")
        return s

    def signed_distance(self, z) -> float:
        """Distance to the patch, positive on the side ``normal`` points to."""
        M = self.manifold
        s = self.foot(z)
        x = self.point(s)
        d = float(M.inner(x, M.log(x, z), self.unit_normal(s)))
        if abs(d) > self.width + _WIDTH_SLACK:
            raise OutOfPatchError(f"point is {abs(d):.6g} from the patch, beyond its width {self.width}")
        return d

    def gradient(self, z) -> np.ndarray:
        """Unit gradient of the signed distance at z: velocity of the normal geodesic through z."""
        M = self.manifold
        s = self.foot(z)
        x = self.point(s)
        nu = self.unit_normal(s)
        d = float(M.inner(x, M.log(x, z), nu))
        g = M.geodesic_velocity(x, nu, d)
        z = np.asarray(z, dtype=float)
        return g / M.norm(z, g)

    def probe_injectivity(self, rng: np.random.Generator, samples: int = 16, tol: float = 1e-8) -> bool:
        """Push sampled patch points along the normal and check the foot map inverts it."""
        M = self.manifold
        for _ in range(samples):
            s = rng.standard_normal(self.codim_params)
            if self.codim_params:
                s *= 0.9 * self.delta * rng.uniform() ** (1 / self.codim_params) / np.linalg.norm(s)
            tau = rng.uniform(-0.9, 0.9) * self.width
            z = M.exp(self.point(s), tau * self.unit_normal(s))
            s2 = self.foot(z)
            if np.linalg.norm(s2 - s) > tol or abs(self.signed_distance(z) - tau) > tol:
                return False
        return True


def dist_to_patch(patch: LevelSetPatch, z) -> float:
    return abs(patch.signed_distance(z))


@dataclass(frozen=True)
class LevelSetForm:
    point: np.ndarray
    basis: np.ndarray
    matrix: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        if self.matrix.shape == (1, 1):
            return float(self.matrix[0, 0])
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def __call__(self, a, b) -> float:
        """Evaluate the form on tangent vectors at ``point`` (projected onto the level set)."""
        ca = self.basis @ np.asarray(a, dtype=float)
        cb = self.basis @ np.asarray(b, dtype=float)
        return float(ca @ self.matrix @ cb)


def hessian_on_level_set(patch: LevelSetPatch, z, normal_at_z, rotation=None) -> LevelSetForm:
    """Hessian of the patch distance at z restricted to the level-set tangent space.

    Hess(a, a) is the derivative of <grad f, c'> along the geodesic c(s) =
    exp_z(s a); it is taken by Richardson-extrapolated central differences of
    the (unit) gradient, which avoids differencing distance values twice.
    """
    M = patch.manifold
    z = np.asarray(z, dtype=float)
    frame = _complement(M, z, normal_at_z)
    if rotation is not None:
        frame = np.asarray(rotation, dtype=float) @ frame

    def slope(a, s):
        p = M.exp(z, s * a)
        return float(M.inner(p, patch.gradient(p), M.geodesic_velocity(z, a, s)))

    def second(a):
        def D(h):
            return (slope(a, h) - slope(a, -h)) / (2 * h)

        return (4 * D(HESSIAN_STEP / 2) - D(HESSIAN_STEP)) / 3

    k = len(frame)
    A = np.empty((k, k))
    for i in range(k):
        A[i, i] = second(frame[i])
    for i in range(k):
        for j in range(i + 1, k):
            A[i, j] = A[j, i] = (second(frame[i] + frame[j]) - second(frame[i] - frame[j])) / 4
    return LevelSetForm(z, frame, A)


def second_fundamental_form(
    M: ModelManifold, y, w, t: float, width: float | None = None, delta: float | None = None, rotation=None
) -> LevelSetForm:
    """II(w, t): the form on the level set at distance t from S_{w^⊥}, evaluated at exp_y(t w)."""
    y = M.check_point(np.asarray(y, dtype=float))
    w = M.check_tangent(y, np.asarray(w, dtype=float))
    if abs(M.norm(y, w) - 1.0) > 1e-9:
        raise ValueError("w must be a unit tangent vector")
    if not 0 <= t < M.focal_radius_bound:
        raise ValueError("t must lie in [0, R)")
    if width is None:
        width = default_delta(M)
    patch = LevelSetPatch(M, y, w, delta=delta, width=max(width, t))
    z = M.exp(y, t * w)
    # the normal geodesic meets every level set orthogonally: its velocity is the unit gradient
    grad = M.geodesic_velocity(y, w, t)
    grad = grad / M.norm(z, grad)
    return hessian_on_level_set(patch, z, grad, rotation=rotation)


def mu(M: ModelManifold, y, w, t: float, **kwargs) -> float:
    """Minimum eigenvalue of II(w, t)."""
    return second_fundamental_form(M, y, w, t, **kwargs).min_eigenvalue


@dataclass(frozen=True)
class FlowConstants:
    m: int
    D0: float
    C0: float

    def __post_init__(self):
        if self.D0 < 0 or self.C0 < 0:
            raise ValueError("D0 and C0 must be nonnegative")

    @property
    def C(self) -> float:
        return self.m * self.D0 * self.C0


def estimate_C0(Y, samples: int, rng: np.random.Generator | None = None, n_t: int = 11, angle: float = 0.1) -> float:
    """Empirical Lipschitz constant of mu over unit tangents at Y and t in [0, epsilon]."""
    from .convex import sample_points

    rng = np.random.default_rng(0) if rng is None else rng
    M = Y.manifold
    ts = np.linspace(0.0, Y.epsilon, n_t)
    dt = ts[1] - ts[0]
    best = 0.0
    for y in sample_points(Y, samples, rng, boundary_fraction=0.5):
        w = M.random_unit_tangent(y, rng)
        w2 = _rotate_towards(M, y, w, rng, angle)
        m1 = np.array([mu(M, y, w, t, width=Y.epsilon) for t in ts])
        m2 = np.array([mu(M, y, w2, t, width=Y.epsilon) for t in ts])
        best = max(best, float(np.max(np.abs(np.diff(m1)) / dt)), float(np.max(np.abs(m1 - m2)) / angle))
    return C0_SAFETY * best


def trace_lower_bound(constants: FlowConstants, dY: float) -> float:
    if dY < 0:
        raise ValueError("distance to Y must be nonnegative")
    return -constants.C * dY


def _rotate_towards(M: ModelManifold, y, w, rng, angle: float):
    """Unit tangent at y making the given angle with w."""
    other = M.random_unit_tangent(y, rng)
    other = other - M.inner(y, other, w) * w
    n = M.norm(y, other)
    if n < 1e-8:
        return w
    return math.cos(angle) * w + math.sin(angle) * other / n


def _orthonormalize(M: ModelManifold, p, vectors) -> list:
    out = []
    for v in vectors:
        for e in out:
            v = v - M.inner(p, v, e) * e
        n = M.norm(p, v)
        if n > 1e-10:
            out.append(v / n)
    return out


def _complement(M: ModelManifold, p, normal) -> np.ndarray:
    """Orthonormal basis (rows) of the orthogonal complement of ``normal`` in T_p."""
    normal = np.asarray(normal, dtype=float)
    normal = normal / M.norm(p, normal)
    rows = _orthonormalize(M, p, [normal, *M.tangent_basis(p)])[1:]
    rows = rows[: M.dim - 1]
    if M.kind == SPHERE2:
        rows = [M.project_tangent(p, r) for r in rows]
    return np.array(rows).reshape(M.dim - 1, M.ambient_dim)
