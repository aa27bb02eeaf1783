"""Explicit intrinsic time stepping of the harmonic map heat flow on flat meshes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import FlowBlowUpError, OutOfRangeError
from .manifold import FLAT, POINCARE, SPHERE2, ModelManifold

INTERVAL = "interval"
CIRCLE = "circle"
SQUARE = "square"
TORUS = "torus"
_KINDS = {INTERVAL: (1, False), CIRCLE: (1, True), SQUARE: (2, False), TORUS: (2, True)}

DEFAULT_SAFETY = 0.25


@dataclass(frozen=True)
class DomainMesh:
    """Uniform grid on [0,1]^m; periodic kinds identify opposite faces."""

    kind: str
    resolution: int

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown mesh kind {self.kind!r}")
        if self.resolution < 3:
            raise ValueError("need at least 3 nodes per axis")

    @property
    def m(self) -> int:
        return _KINDS[self.kind][0]

    @property
    def periodic(self) -> bool:
        return _KINDS[self.kind][1]

    @property
    def h(self) -> float:
        n = self.resolution
        return 1.0 / n if self.periodic else 1.0 / (n - 1)

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.m

    @property
    def n_nodes(self) -> int:
        return self.resolution**self.m

    @property
    def coords(self) -> np.ndarray:
        axis = np.arange(self.resolution) * self.h
        grids = np.meshgrid(*([axis] * self.m), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(self.n_nodes, dtype=bool)
        idx = np.indices(self.shape).reshape(self.m, -1)
        return np.any((idx == 0) | (idx == self.resolution - 1), axis=0)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def neighbor(self, node: int, axis: int, offset: int) -> int:
        idx = list(np.unravel_index(node, self.shape))
        idx[axis] += offset
        if self.periodic:
            idx[axis] %= self.resolution
        elif not 0 <= idx[axis] < self.resolution:
            raise IndexError("stencil leaves the mesh")
        return int(np.ravel_multi_index(idx, self.shape))


def interval(resolution: int) -> DomainMesh:
    return DomainMesh(INTERVAL, resolution)


def square(resolution: int) -> DomainMesh:
    return DomainMesh(SQUARE, resolution)


@dataclass(frozen=True)
class MapField:
    mesh: DomainMesh
    manifold: ModelManifold
    values: np.ndarray

    def __post_init__(self):
        values = self.manifold.check_point(np.asarray(self.values, dtype=float))
        if values.shape != (self.mesh.n_nodes, self.manifold.ambient_dim):
            raise ValueError(f"values have shape {values.shape}, expected {(self.mesh.n_nodes, self.manifold.ambient_dim)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def trusted(cls, mesh: DomainMesh, manifold: ModelManifold, values: np.ndarray) -> "MapField":
        """Build without re-validating values produced by exp."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "mesh", mesh)
        object.__setattr__(obj, "manifold", manifold)
        object.__setattr__(obj, "values", values)
        return obj

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.mesh.shape + (-1,))


@dataclass(frozen=True)
class FlowState:
    field: MapField
    time: float


# -- finite differences -----------------------------------------------------


def _neighbors(G: np.ndarray, axis: int, periodic: bool):
    """(next, previous) along an axis; without periodicity the end entries are junk."""
    if periodic:
        return np.roll(G, -1, axis=axis), np.roll(G, 1, axis=axis)
    nxt = np.empty_like(G)
    prv = np.empty_like(G)
    lo = [slice(None)] * G.ndim
    hi = [slice(None)] * G.ndim
    lo[axis], hi[axis] = slice(0, -1), slice(1, None)
    nxt[tuple(lo)] = G[tuple(hi)]
    prv[tuple(hi)] = G[tuple(lo)]
    end = [slice(None)] * G.ndim
    end[axis] = -1
    nxt[tuple(end)] = G[tuple(end)]
    end[axis] = 0
    prv[tuple(end)] = G[tuple(end)]
    return nxt, prv


def laplacian(field: MapField) -> np.ndarray:
    """Componentwise second-order Laplacian in ambient/chart coordinates, per node."""
    G = field.grid()
    h2 = field.mesh.h ** 2
    out = np.zeros_like(G)
    for a in range(field.mesh.m):
        nxt, prv = _neighbors(G, a, field.mesh.periodic)
        out += nxt + prv - 2 * G
    return (out / h2).reshape(field.values.shape)


def central_derivatives(field: MapField) -> np.ndarray:
    """Central differences d_i u, shape (nodes, m, ambient)."""
    G = field.grid()
    h = field.mesh.h
    parts = []
    for a in range(field.mesh.m):
        nxt, prv = _neighbors(G, a, field.mesh.periodic)
        parts.append((nxt - prv) / (2 * h))
    return np.stack(parts, axis=-2).reshape(field.mesh.n_nodes, field.mesh.m, -1)


def tension_field(field: MapField) -> np.ndarray:
    """Discrete tension at every node as frame tangent vectors; zero on the boundary."""
    M = field.manifold
    u = field.values
    lap = laplacian(field)
    if M.kind == SPHERE2:
        # Delta u + |grad u|^2 u; the second term is normal and drops out under projection
        tau = M.project_tangent(u, lap)
    elif M.kind == FLAT:
        tau = lap
    else:
        du = central_derivatives(field)
        gamma = M.christoffel(u)
        chart = lap + np.einsum("nabc,nib,nic->na", gamma, du, du)
        tau = M.to_frame(u, chart)
    tau[field.mesh.boundary_mask] = 0.0
    return tau


def tension(field: MapField, node: int) -> np.ndarray:
    if field.mesh.boundary_mask[node]:
        raise ValueError("tension is not evaluated at boundary nodes (Dirichlet data)")
    return tension_field(field)[node]


def cfl_dt(mesh: DomainMesh, safety: float) -> float:
    if not 0 < safety <= 1:
        raise ValueError("safety factor must lie in (0, 1]")
    return safety * mesh.h**2 / (2 * mesh.m)


def step(state: FlowState, dt: float, boundary_data=None) -> FlowState:
    """One explicit step u <- exp(u, dt * tau); boundary nodes take the given data."""
    field = state.field
    mesh, M = field.mesh, field.manifold
    if dt > cfl_dt(mesh, 1.0) * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.6g} exceeds the stability bound {cfl_dt(mesh, 1.0):.6g}")
    tau = tension_field(field)
    with np.errstate(all="ignore"):
        try:
            new = M.exp_unchecked(field.values, dt * tau)
        except OutOfRangeError as exc:
            bad = int(np.argmax(np.linalg.norm(dt * tau, axis=-1)))
            raise FlowBlowUpError(f"flow blew up at t = {state.time:.6g}, node {bad}: {exc}") from exc
        broken = ~np.isfinite(new).all(axis=-1)
        if M.kind == POINCARE:
            broken |= np.sum(np.nan_to_num(new) ** 2, axis=-1) >= 1.0
    if broken.any():
        bad = int(np.flatnonzero(broken)[0])
        raise FlowBlowUpError(f"flow blew up at t = {state.time:.6g}, node {bad}: left the target")
    if not mesh.periodic:
        if boundary_data is None:
            new[mesh.boundary_mask] = field.values[mesh.boundary_mask]
        else:
            new[mesh.boundary_mask] = boundary_data
    return FlowState(MapField.trusted(mesh, M, new), state.time + dt)


# -- diagnostics ------------------------------------------------------------


def _edges(mesh: DomainMesh, axis: int):
    """(from, to) node index arrays of the edges along one axis."""
    idx = np.arange(mesh.n_nodes).reshape(mesh.shape)
    nxt = np.roll(idx, -1, axis=axis)
    if not mesh.periodic:
        keep = [slice(None)] * mesh.m
        keep[axis] = slice(0, mesh.resolution - 1)
        idx, nxt = idx[tuple(keep)], nxt[tuple(keep)]
    return idx.ravel(), nxt.ravel()


def dirichlet_energy(field: MapField) -> float:
    M, mesh = field.manifold, field.mesh
    h = mesh.h
    total = 0.0
    for a in range(mesh.m):
        i, j = _edges(mesh, a)
        d = M.dist(field.values[i], field.values[j])
        total += float(np.sum(np.asarray(d) ** 2))
    return 0.5 * total / h**2 * h**mesh.m


def differential_norms(field: MapField) -> np.ndarray:
    """Operator norm of the forward-difference differential at each node."""
    M, mesh = field.manifold, field.mesh
    u = field.values
    J = np.zeros((mesh.n_nodes, u.shape[1], mesh.m))
    idx = np.arange(mesh.n_nodes).reshape(mesh.shape)
    for a in range(mesh.m):
        fwd = np.roll(idx, -1, axis=a).ravel()
        col = M.log(u, u[fwd]) / mesh.h
        if not mesh.periodic:
            last = np.take(idx, mesh.resolution - 1, axis=a).ravel()
            back = np.take(idx, mesh.resolution - 2, axis=a).ravel()
            col[last] = -M.log(u[last], u[back]) / mesh.h
        J[:, :, a] = col
    return np.linalg.norm(J, ord=2, axis=(1, 2))


@dataclass
class Trajectory:
    """Saved states of a run; ``previous[k]`` is the state one step before ``states[k]``."""

    states: list = field(default_factory=list)
    previous: list = field(default_factory=list)
    dt: float = 0.0
    D0: float = 0.0
    stopped_early: bool = False

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    def values(self) -> np.ndarray:
        return np.stack([s.field.values for s in self.states])


def run(
    initial: MapField,
    window: tuple,
    boundary: Optional[Callable[[float], np.ndarray]] = None,
    dt: float | None = None,
    safety: float = DEFAULT_SAFETY,
    save_every: int = 1,
    stop: Optional[Callable[[FlowState], bool]] = None,
) -> Trajectory:
    """Integrate from window[0] to window[1] with uniform steps no larger than the target dt.

    ``boundary(t)`` returns the Dirichlet values at the boundary nodes; when
    omitted the initial boundary values are held fixed.  ``stop`` is polled
    at save times and ends the run early when it returns True.
    """
    a, b = map(float, window)
    if not b >= a:
        raise ValueError("window must satisfy a <= b")
    mesh = initial.mesh
    if boundary is None and not mesh.periodic:
        fixed = initial.values[mesh.boundary_mask].copy()
        boundary = lambda t: fixed
    target = cfl_dt(mesh, safety) if dt is None else float(dt)
    n_steps = max(1, math.ceil((b - a) / target - 1e-9)) if b > a else 0
    step_dt = (b - a) / n_steps if n_steps else target
    state = FlowState(initial, a)
    traj = Trajectory(dt=step_dt)
    traj.states.append(state)
    traj.previous.append(None)
    D0 = float(np.max(differential_norms(initial)))
    prev = state
    for k in range(1, n_steps + 1):
        t_new = a + k * step_dt
        data = None if mesh.periodic else boundary(t_new)
        prev, state = state, step(state, step_dt, data)
        state = FlowState(state.field, t_new)
        if k % save_every == 0 or k == n_steps:
            traj.states.append(state)
            traj.previous.append(prev)
            D0 = max(D0, float(np.max(differential_norms(state.field))))
            if stop is not None and stop(state):
                traj.stopped_early = True
                break
    traj.D0 = D0
    return traj
