"""Containment checks on flow trajectories.

``sigma_trace`` monitors the distance of the flow to Y, ``exterior_identity_terms`` and
``touching_test`` check the two analytic ingredients at exterior points, and
``max_principle_check`` is the discrete stand-in for the parabolic maximum
principle applied to sigma.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import convex
from .errors import DegenerateInputError, OutOfTubeError
from .flow import DomainMesh, FlowState, Trajectory, central_derivatives
from .level_geometry import FlowConstants, LevelSetForm, LevelSetPatch, hessian_on_level_set


class Verdict(str, enum.Enum):
    CONTAINED = "CONTAINED"
    VIOLATED = "VIOLATED"
    TUBE_EXITED = "TUBE_EXITED"
    HYPOTHESIS_VIOLATED = "HYPOTHESIS_VIOLATED"


class Classification(str, enum.Enum):
    HYPOTHESIS_AND_CONCLUSION_HOLD = "HYPOTHESIS_AND_CONCLUSION_HOLD"
    HYPOTHESIS_VIOLATED = "HYPOTHESIS_VIOLATED"
    COUNTEREXAMPLE = "COUNTEREXAMPLE"


def default_tolerance(h: float, dt: float) -> float:
    return 10.0 * (h * h + dt)


@dataclass
class ContainmentReport:
    times: np.ndarray
    sigma: np.ndarray  # (saved times, nodes)
    tolerance: float
    verdict: Verdict
    first_violation: Optional[tuple] = None  # (time, node, sigma)
    tube_exit: Optional[tuple] = None  # (time, node)
    hypothesis_failure: Optional[str] = None
    constants: Optional[FlowConstants] = None

    @property
    def sigma_max_series(self) -> np.ndarray:
        return self.sigma.max(axis=1) if self.sigma.size else np.zeros(0)


def sigma_trace(
    trajectory: Trajectory, Y: convex.ConvexBody, tolerance: float, constants: FlowConstants | None = None
) -> ContainmentReport:
    """sigma = d_Y o u at every saved state and node, with a containment verdict."""
    states = trajectory.states
    mesh = states[0].field.mesh
    bmask = mesh.boundary_mask
    failure = None
    if not np.all(Y.contains(states[0].field.values)):
        node = int(np.flatnonzero(~Y.contains(states[0].field.values))[0])
        failure = f"initial map leaves Y at node {node}"
    elif bmask.any():
        for s in states:
            inside = Y.contains(s.field.values[bmask])
            if not np.all(inside):
                node = int(mesh.boundary_nodes[np.flatnonzero(~inside)[0]])
                failure = f"boundary data leaves Y at t = {s.time:.17g}, node {node}"
                break

    rows, times, tube_exit = [], [], None
    for s in states:
        try:
            rows.append(convex.distances(Y, s.field.values))
        except OutOfTubeError:
            d = np.array([_tube_distance(Y, p) for p in s.field.values])
            node = int(np.argmax(d))
            tube_exit = (s.time, node)
            break
        times.append(s.time)
    sigma = np.array(rows).reshape(len(rows), mesh.n_nodes)
    times = np.array(times)

    first = None
    over = np.argwhere(sigma > tolerance)
    if len(over):
        k, node = over[0]
        first = (float(times[k]), int(node), float(sigma[k, node]))

    if failure is not None:
        verdict = Verdict.HYPOTHESIS_VIOLATED
    elif tube_exit is not None:
        verdict = Verdict.TUBE_EXITED
    elif first is not None:
        verdict = Verdict.VIOLATED
    else:
        verdict = Verdict.CONTAINED
    return ContainmentReport(times, sigma, tolerance, verdict, first, tube_exit, failure, constants)


def _tube_distance(Y: convex.ConvexBody, p) -> float:
    try:
        return convex.distance(Y, p)
    except OutOfTubeError:
        return math.inf


# -- exterior-point identities ----------------------------------------------


@dataclass(frozen=True)
class ExteriorIdentityTerms:
    distance: float  # d_Y(u(node)) = rho(node)
    laplacian: float  # discrete Laplacian of rho
    time_derivative: float  # backward difference of rho
    trace: float  # sum_i II(proj u_i, proj u_i)
    form: LevelSetForm

    @property
    def residual(self) -> float:
        return abs(self.laplacian - self.time_derivative - self.trace)


def supporting_patch(Y: convex.ConvexBody, y) -> LevelSetPatch:
    """S_{H_y}: the patch through pi(y) tangent to the supporting hyperplane, normal toward y."""
    plane = convex.supporting_hyperplane(Y, y)
    return LevelSetPatch(Y.manifold, plane.foot, -plane.normal, width=Y.epsilon)


def exterior_identity_terms(state: FlowState, previous: FlowState, Y: convex.ConvexBody, node: int) -> ExteriorIdentityTerms:
    """Terms of Delta rho = d rho/dt + trace II_y(proj u_*, proj u_*) at an exterior interior node."""
    field = state.field
    mesh, M = field.mesh, field.manifold
    if mesh.boundary_mask[node]:
        raise DegenerateInputError("the exterior identity needs an interior node")
    y = field.values[node]
    if convex.distance(Y, y) <= convex.ACTIVITY_TOL:
        raise DegenerateInputError("u(node) must lie outside Y")
    dt = state.time - previous.time
    if not dt > 0:
        raise DegenerateInputError("previous state must precede the current one")
    patch = supporting_patch(Y, y)
    rho0 = patch.signed_distance(y)
    lap = 0.0
    for a in range(mesh.m):
        plus = field.values[mesh.neighbor(node, a, 1)]
        minus = field.values[mesh.neighbor(node, a, -1)]
        lap += patch.signed_distance(plus) + patch.signed_distance(minus) - 2 * rho0
    lap /= mesh.h**2
    drho = (rho0 - patch.signed_distance(previous.field.values[node])) / dt
    form = hessian_on_level_set(patch, y, patch.gradient(y))
    du = central_derivatives(field)[node]
    trace = 0.0
    for a in range(mesh.m):
        v = M.project_tangent(y, M.to_frame(y, du[a]))
        trace += form(v, v)
    return ExteriorIdentityTerms(rho0, lap, drho, trace, form)


def exterior_identity_residual(state: FlowState, previous: FlowState, Y: convex.ConvexBody, node: int) -> float:
    return exterior_identity_terms(state, previous, Y, node).residual


def touching_test(
    state: FlowState,
    Y: convex.ConvexBody,
    node: int,
    probe_radius: float,
    rng: np.random.Generator | None = None,
    samples: int = 100,
    tol: float = 1e-8,
) -> bool:
    """Does the patch distance touch d_Y from below at u(node)?"""
    M = Y.manifold
    rng = np.random.default_rng(0) if rng is None else rng
    y = state.field.values[node]
    if convex.distance(Y, y) <= convex.ACTIVITY_TOL:
        raise DegenerateInputError("touching test needs u(node) outside Y")
    patch = supporting_patch(Y, y)
    if abs(patch.signed_distance(y) - convex.distance(Y, y)) > tol:
        return False
    for _ in range(samples):
        w = M.random_unit_tangent(y, rng)
        z = M.exp(y, probe_radius * rng.uniform() * w)
        if patch.signed_distance(z) > convex.distance(Y, z) + tol:
            return False
    return True


# -- maximum principle ------------------------------------------------------


@dataclass
class MaxPrincipleVerdict:
    classification: Classification
    h_transform_max: float
    witness: Optional[dict] = None
    skipped: int = 0  # interior points with 0 < f <= tolerance, not tested


def max_principle_check(
    f, times, mesh: DomainMesh, C: float, tolerance: float
) -> MaxPrincipleVerdict:
    """Discrete maximum principle for df/dt - Delta f - C f <= 0 where f > 0.

    ``f`` has shape (len(times), nodes).  The inequality is tested with a
    backward time difference and the five/three-point Laplacian at the same
    time level.
    """
    f = np.asarray(f, dtype=float)
    times = np.asarray(times, dtype=float)
    if f.shape != (len(times), mesh.n_nodes):
        raise ValueError("f must have shape (len(times), mesh nodes)")
    htrans = np.exp(-(C + 1.0) * times)[:, None] * f
    hmax = float(htrans.max()) if f.size else 0.0

    def out(cls, witness=None, skipped=0):
        return MaxPrincipleVerdict(cls, hmax, witness, skipped)

    if f.size == 0:
        return out(Classification.HYPOTHESIS_AND_CONCLUSION_HOLD)
    k0 = np.flatnonzero(f[0] > tolerance)
    if len(k0):
        node = int(k0[0])
        return out(Classification.HYPOTHESIS_VIOLATED, {"where": "initial", "time": float(times[0]), "node": node, "f": float(f[0, node])})
    bmask = mesh.boundary_mask
    if bmask.any():
        bad = np.argwhere(f[:, bmask] > tolerance)
        if len(bad):
            k, j = bad[0]
            node = int(mesh.boundary_nodes[j])
            return out(Classification.HYPOTHESIS_VIOLATED, {"where": "boundary", "time": float(times[k]), "node": node, "f": float(f[k, node])})

    skipped = 0
    G = f.reshape((len(times),) + mesh.shape)
    lap = np.zeros_like(G)
    for a in range(mesh.m):
        ax = a + 1
        lap += np.roll(G, -1, axis=ax) + np.roll(G, 1, axis=ax) - 2 * G
    lap = lap.reshape(f.shape) / mesh.h**2
    interior = ~bmask
    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        positive = interior & (f[k] > 0)
        tested = positive & (f[k] > tolerance)
        skipped += int(np.sum(positive & ~tested))
        if not tested.any():
            continue
        lhs = (f[k] - f[k - 1]) / dt - lap[k] - C * f[k]
        bad = np.flatnonzero(tested & (lhs > tolerance))
        if len(bad):
            node = int(bad[0])
            return out(
                Classification.HYPOTHESIS_VIOLATED,
                {"where": "interior", "time": float(times[k]), "node": node, "f": float(f[k, node]), "lhs": float(lhs[node])},
                skipped,
            )
    worst = np.unravel_index(int(np.argmax(f)), f.shape)
    if f[worst] > tolerance:
        return out(
            Classification.COUNTEREXAMPLE,
            {"where": "interior", "time": float(times[worst[0]]), "node": int(worst[1]), "f": float(f[worst])},
            skipped,
        )
    return out(Classification.HYPOTHESIS_AND_CONCLUSION_HOLD, None, skipped)
