"""Scenario files: parsing, named map families, execution and CSV reports.

A scenario is a YAML mapping with ``schema: 1``.  See README.md for the full
key list; ``parse_scenario`` fills defaults and validates every component
invariant up front, naming the offending key on failure.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import convex, flow, level_geometry, verify
from .errors import FlowBlowUpError, ScenarioError
from .manifold import FLAT, SPHERE2, ModelManifold

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_HYPOTHESIS = 2
EXIT_TUBE = 3
EXIT_CONTAINMENT = 4
EXIT_INVALID = 5
EXIT_SOLVER = 6

INITIAL_FAMILIES = ("constant", "geodesic-arc", "great-circle-wander", "fourier-perturbed", "random-in-body", "radial-bulge")
BOUNDARY_FAMILIES = ("fixed", "constant", "wander", "push-out")

_TOP_KEYS = {"schema", "name", "seed", "target", "body", "mesh", "initial", "boundary", "window", "dt", "save_every", "tolerances", "checks"}


@dataclass
class Scenario:
    name: str
    seed: int
    manifold: ModelManifold
    body: convex.ConvexBody
    mesh: flow.DomainMesh
    initial: dict
    boundary: Optional[dict]
    window: tuple
    safety: float
    save_every: int
    containment_tolerance: Optional[float]
    checks: dict = field(default_factory=dict)
    override_convexity_check: bool = False

    @property
    def dt(self) -> float:
        return flow.cfl_dt(self.mesh, self.safety)

    @property
    def tolerance(self) -> float:
        if self.containment_tolerance is not None:
            return self.containment_tolerance
        return verify.default_tolerance(self.mesh.h, self.dt)


# -- parsing ----------------------------------------------------------------


def _get(d: dict, key: str, where: str, default: Any = ..., kind=None):
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{where}.{key}: required key missing")
        return default
    value = d[key]
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}.{key}: {exc}") from exc
    return value


def _vector(value, where: str) -> np.ndarray:
    try:
        out = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: expected a list of numbers") from exc
    if out.ndim != 1:
        raise ScenarioError(f"{where}: expected a list of numbers")
    return out


def _manifold(spec, where="target") -> ModelManifold:
    if not isinstance(spec, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    kind = _get(spec, "kind", where, kind=str)
    try:
        if kind == FLAT:
            return ModelManifold.flat(_get(spec, "dim", where, kind=int))
        if kind == SPHERE2:
            return ModelManifold.sphere2()
        if kind in ("poincare", "poincare-disk"):
            return ModelManifold.poincare_disk()
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    raise ScenarioError(f"{where}.kind: unknown target {kind!r}")


def _point(M: ModelManifold, value, where: str) -> np.ndarray:
    p = _vector(value, where)
    if M.kind == SPHERE2 and p.shape == (3,) and np.linalg.norm(p) > 0:
        p = p / np.linalg.norm(p)
    try:
        return M.check_point(p)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _body(M: ModelManifold, spec, override: bool) -> convex.ConvexBody:
    where = "body"
    if not isinstance(spec, dict):
        raise ScenarioError("body: expected a mapping")
    eps = _get(spec, "epsilon", where, kind=float)
    constraints = []
    for i, b in enumerate(spec.get("balls") or []):
        loc = f"body.balls[{i}]"
        constraints.append(
            convex.GeodesicBall(_point(M, _get(b, "center", loc), loc + ".center"), _get(b, "radius", loc, kind=float))
        )
    for i, hs in enumerate(spec.get("halfspaces") or []):
        loc = f"body.halfspaces[{i}]"
        try:
            constraints.append(convex.halfspace(_vector(_get(hs, "normal", loc), loc + ".normal"), _get(hs, "offset", loc, kind=float)))
        except ValueError as exc:
            raise ScenarioError(f"{loc}: {exc}") from exc
    if not constraints:
        raise ScenarioError("body: needs at least one ball or half-space")
    witness = spec.get("witness")
    if witness is not None:
        witness = _point(M, witness, "body.witness")
    try:
        return convex.ConvexBody(M, constraints, eps, witness=witness, validated=not override)
    except ValueError as exc:
        raise ScenarioError(f"body: {exc}") from exc


def parse_scenario(text: str, override_convexity_check: bool = False) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ScenarioError(f"{unknown[0]}: unknown top-level key")
    schema = data.get("schema")
    if schema != SCHEMA_VERSION:
        raise ScenarioError(f"schema: expected {SCHEMA_VERSION}, got {schema!r}")
    root = "scenario"
    M = _manifold(_get(data, "target", root))
    body = _body(M, _get(data, "body", root), override_convexity_check)

    mspec = _get(data, "mesh", root)
    try:
        mesh = flow.DomainMesh(_get(mspec, "kind", "mesh", kind=str), _get(mspec, "resolution", "mesh", kind=int))
    except ValueError as exc:
        raise ScenarioError(f"mesh: {exc}") from exc

    initial = dict(_get(data, "initial", root))
    fam = initial.get("family")
    if fam not in INITIAL_FAMILIES:
        raise ScenarioError(f"initial.family: expected one of {', '.join(INITIAL_FAMILIES)}, got {fam!r}")

    boundary = data.get("boundary")
    if boundary is None and not mesh.periodic:
        raise ScenarioError("boundary: mesh has a boundary, so boundary data is required")
    if boundary is not None:
        boundary = dict(boundary)
        if boundary.get("family") not in BOUNDARY_FAMILIES:
            raise ScenarioError(f"boundary.family: expected one of {', '.join(BOUNDARY_FAMILIES)}, got {boundary.get('family')!r}")

    window = _get(data, "window", root, default=[0.0, 1.0])
    try:
        window = tuple(float(w) for w in window)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("window: expected [a, b]") from exc
    if len(window) != 2 or not window[1] >= window[0]:
        raise ScenarioError("window: expected [a, b] with a <= b")

    dspec = data.get("dt") or {}
    safety = _get(dspec, "safety", "dt", default=flow.DEFAULT_SAFETY, kind=float)
    if not 0 < safety <= 1:
        raise ScenarioError("dt.safety: must lie in (0, 1]")
    save_every = _get(data, "save_every", root, default=1, kind=int)
    if save_every < 1:
        raise ScenarioError("save_every: must be >= 1")
    tol = (data.get("tolerances") or {}).get("containment")
    checks = {"convexity_trials": 200, "c0_samples": 4, "patch_probe": 8}
    checks.update(data.get("checks") or {})

    s = Scenario(
        name=str(data.get("name", "scenario")),
        seed=_get(data, "seed", root, default=0, kind=int),
        manifold=M,
        body=body,
        mesh=mesh,
        initial=initial,
        boundary=boundary,
        window=window,
        safety=safety,
        save_every=save_every,
        containment_tolerance=None if tol is None else float(tol),
        checks=checks,
        override_convexity_check=override_convexity_check,
    )
    # build the maps once so family parameter errors surface at parse time
    field0 = initial_map(s)
    boundary_trajectory(s, field0)
    return s


# -- named families ---------------------------------------------------------


def _plane_frame(M: ModelManifold, c) -> np.ndarray:
    basis = M.tangent_basis(c)
    if len(basis) < 2:
        raise ScenarioError("this family needs a target of dimension >= 2")
    return basis[:2]


def initial_map(s: Scenario) -> flow.MapField:
    M, mesh, spec = s.manifold, s.mesh, s.initial
    x = mesh.coords
    fam = spec["family"]
    where = "initial"
    rng = np.random.default_rng(s.seed)
    n = mesh.n_nodes
    if fam == "constant":
        p = _point(M, _get(spec, "point", where), "initial.point")
        values = np.tile(p, (n, 1))
    elif fam == "geodesic-arc":
        a = _point(M, _get(spec, "start", where), "initial.start")
        b = _point(M, _get(spec, "end", where), "initial.end")
        warp = _get(spec, "warp", where, default=0.0, kind=float)
        theta = x[:, 0] + warp * np.sin(np.pi * x[:, 0]) / np.pi
        values = M.geodesic(a, b, theta)
    elif fam in ("great-circle-wander", "radial-bulge"):
        c = _point(M, _get(spec, "center", where), "initial.center")
        e = _plane_frame(M, c)
        if fam == "great-circle-wander":
            radius = _get(spec, "radius", where, kind=float)
            turns = _get(spec, "turns", where, default=1, kind=int)
            phase = _get(spec, "phase", where, default=0.0, kind=float)
            r = np.full(n, radius)
            th = 2 * np.pi * turns * x[:, 0] + phase
        else:
            inner = _get(spec, "inner", where, kind=float)
            outer = _get(spec, "outer", where, kind=float)
            span = _get(spec, "span", where, default=1.0, kind=float)
            r = inner + (outer - inner) * np.sin(np.pi * x[:, 0])
            th = span * (x[:, 0] - 0.5)
        v = r[:, None] * (np.cos(th)[:, None] * e[0] + np.sin(th)[:, None] * e[1])
        values = M.exp(np.broadcast_to(c, v.shape), v)
    elif fam == "fourier-perturbed":
        base = _point(M, _get(spec, "base", where), "initial.base")
        amp = _get(spec, "amplitude", where, kind=float)
        modes = _get(spec, "modes", where, default=3, kind=int)
        basis = M.tangent_basis(base)
        v = np.zeros((n, M.ambient_dim))
        freq = 2 * np.pi if mesh.periodic else np.pi
        for k in range(1, modes + 1):
            coeff = rng.standard_normal(len(basis)) @ basis * amp / k
            shape = np.prod(np.sin(freq * k * x), axis=1)
            v += shape[:, None] * coeff
        values = M.exp(np.broadcast_to(base, v.shape), v)
    elif fam == "random-in-body":
        values = convex.sample_points(s.body, n, rng)
    else:  # pragma: no cover - guarded in parse_scenario
        raise ScenarioError(f"initial.family: unknown {fam!r}")
    try:
        return flow.MapField(mesh, M, values)
    except ValueError as exc:
        raise ScenarioError(f"initial: {exc}") from exc


def boundary_trajectory(s: Scenario, field0: flow.MapField) -> Optional[Callable[[float], np.ndarray]]:
    if s.mesh.periodic or s.boundary is None:
        return None
    M, spec = s.manifold, s.boundary
    where = "boundary"
    start = field0.values[s.mesh.boundary_mask].copy()
    fam = spec["family"]
    if fam == "fixed":
        return lambda t: start
    if fam == "constant":
        p = _point(M, _get(spec, "point", where), "boundary.point")
        held = np.tile(p, (len(start), 1))
        return lambda t: held
    if fam == "wander":
        c = _point(M, _get(spec, "center", where), "boundary.center")
        omega = _get(spec, "angular_speed", where, kind=float)
        e = _plane_frame(M, c)
        logs = M.log(np.broadcast_to(c, start.shape), start)
        a, b = logs @ e[0], logs @ e[1]
        rest = logs - a[:, None] * e[0] - b[:, None] * e[1]
        t0 = s.window[0]

        def wander(t):
            ang = omega * (t - t0)
            ca, sa = math.cos(ang), math.sin(ang)
            v = (ca * a - sa * b)[:, None] * e[0] + (sa * a + ca * b)[:, None] * e[1] + rest
            return M.exp(np.broadcast_to(c, v.shape), v)

        return wander
    if fam == "push-out":
        k = _get(spec, "node", where, default=0, kind=int)
        d = _get(spec, "distance", where, kind=float)
        if not 0 <= k < len(start):
            raise ScenarioError("boundary.node: index outside the boundary node list")
        held = start.copy()
        held[k] = _push_out(s.body, start[k], d)
        return lambda t: held
    raise ScenarioError(f"boundary.family: unknown {fam!r}")  # pragma: no cover


def _push_out(Y: convex.ConvexBody, p, d: float) -> np.ndarray:
    """A point at distance d outside the first constraint, along its radial/normal direction."""
    M = Y.manifold
    c = Y.constraints[0]
    if isinstance(c, convex.GeodesicBall):
        v = M.log(c.center, p)
        n = M.norm(c.center, v)
        u = v / n if n > 1e-12 else M.tangent_basis(c.center)[0]
        return M.exp(c.center, (c.radius + d) * u)
    return p - (p @ c.normal - c.offset - d) * c.normal


# -- execution --------------------------------------------------------------


@dataclass
class RunResult:
    status: int
    verdict: str
    detail: str
    trajectory: Optional[flow.Trajectory] = None
    report: Optional[verify.ContainmentReport] = None
    constants: Optional[level_geometry.FlowConstants] = None
    max_principle: Optional[verify.MaxPrincipleVerdict] = None
    files: list = field(default_factory=list)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def run_scenario(s: Scenario, out_dir: str | None = None, save_every: int | None = None) -> RunResult:
    rng = np.random.default_rng(s.seed)
    Y, M, mesh = s.body, s.manifold, s.mesh

    if not convex.strong_convexity_probe(Y, int(s.checks["convexity_trials"]), rng):
        result = RunResult(EXIT_HYPOTHESIS, "HYPOTHESIS_VIOLATED", "strong convexity probe failed: Y is not convex at this scale")
        return _finish(s, result, out_dir)
    n_probe = int(s.checks["patch_probe"])
    if n_probe:
        w = M.random_unit_tangent(Y.witness, rng)
        patch = level_geometry.LevelSetPatch(M, Y.witness, w, width=Y.epsilon)
        if not patch.probe_injectivity(rng, n_probe):
            result = RunResult(EXIT_HYPOTHESIS, "HYPOTHESIS_VIOLATED", "normal exponential map of the patch is not injective")
            return _finish(s, result, out_dir)

    field0 = initial_map(s)
    bdry = boundary_trajectory(s, field0)
    stop = lambda st: bool(np.any(np.max(Y.constraint_values(st.field.values), axis=-1) > Y.epsilon))
    try:
        traj = flow.run(field0, s.window, bdry, safety=s.safety, save_every=save_every or s.save_every, stop=stop)
    except FlowBlowUpError as exc:
        return _finish(s, RunResult(EXIT_SOLVER, "SOLVER_ABORT", str(exc)), out_dir)

    C0 = level_geometry.estimate_C0(Y, int(s.checks["c0_samples"]), rng)
    constants = level_geometry.FlowConstants(mesh.m, traj.D0, C0)
    report = verify.sigma_trace(traj, Y, s.tolerance, constants)
    mp = verify.max_principle_check(report.sigma, report.times, mesh, constants.C, s.tolerance)

    if report.verdict == verify.Verdict.HYPOTHESIS_VIOLATED:
        status, detail = EXIT_HYPOTHESIS, report.hypothesis_failure
    elif report.verdict == verify.Verdict.TUBE_EXITED:
        status, detail = EXIT_TUBE, f"left B(Y, epsilon) at t = {report.tube_exit[0]:.17g}, node {report.tube_exit[1]}"
    elif report.verdict == verify.Verdict.VIOLATED or mp.classification == verify.Classification.COUNTEREXAMPLE:
        status, detail = EXIT_CONTAINMENT, f"containment violated: {report.first_violation}"
    else:
        status, detail = EXIT_OK, "u stays in Y"
    result = RunResult(status, report.verdict.value, detail, traj, report, constants, mp)
    return _finish(s, result, out_dir)


def _finish(s: Scenario, result: RunResult, out_dir: str | None) -> RunResult:
    if out_dir is not None:
        result.files = emit_report(s, result, out_dir)
    return result


def emit_report(s: Scenario, result: RunResult, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    M, mesh = s.manifold, s.mesh
    traj, report, consts = result.trajectory, result.report, result.constants
    coord_names = [f"u{k}" for k in range(M.ambient_dim)]
    files = []

    path = os.path.join(out_dir, "trajectory.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(["t", "node", *coord_names]) + "\n")
        if traj is not None:
            for st in traj.states:
                t = _fmt(st.time)
                for i, p in enumerate(st.field.values):
                    fh.write(",".join([t, str(i), *map(_fmt, p)]) + "\n")
    files.append(path)

    path = os.path.join(out_dir, "report.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write("t,sigma_max,energy,h_transform_max\n")
        if report is not None and len(report.times):
            C = consts.C
            for k, t in enumerate(report.times):
                st = traj.states[k]
                hmax = math.exp(-(C + 1.0) * t) * float(report.sigma[k].max())
                fh.write(",".join(map(_fmt, (t, report.sigma[k].max(), flow.dirichlet_energy(st.field), hmax))) + "\n")
    files.append(path)

    path = os.path.join(out_dir, "constants.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write("D0,C0,C,epsilon,R,dt,h\n")
        if consts is not None:
            row = (consts.D0, consts.C0, consts.C, s.body.epsilon, M.focal_radius_bound, traj.dt, mesh.h)
            fh.write(",".join(map(_fmt, row)) + "\n")
    files.append(path)

    path = os.path.join(out_dir, "verdict.txt")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{result.verdict} status={result.status} {result.detail}\n")
    files.append(path)

    path = os.path.join(out_dir, "verdict.json")
    payload = {"scenario": s.name, "status": result.status, "verdict": result.verdict, "detail": result.detail}
    if report is not None:
        payload["sigma_max"] = _fmt(report.sigma.max()) if report.sigma.size else _fmt(0.0)
        payload["tolerance"] = _fmt(report.tolerance)
    if result.max_principle is not None:
        payload["max_principle"] = result.max_principle.classification.value
        payload["h_transform_max"] = _fmt(result.max_principle.h_transform_max)
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    files.append(path)
    return files
