"""Command-line driver: ``convexflow run | check | mu-table``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import scenario as sc
from .errors import ConvexFlowError, ScenarioError
from .level_geometry import mu
from .manifold import ModelManifold


def _load(path: str, override: bool) -> sc.Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    return sc.parse_scenario(text, override_convexity_check=override)


def parse_manifold(text: str) -> ModelManifold:
    """'sphere2', 'poincare' or 'flat:<dim>'."""
    kind, _, dim = text.partition(":")
    if kind == "sphere2":
        return ModelManifold.sphere2()
    if kind in ("poincare", "poincare-disk"):
        return ModelManifold.poincare_disk()
    if kind == "flat":
        return ModelManifold.flat(int(dim or 2))
    raise ValueError(f"unknown manifold {text!r}")


def mu_table(M: ModelManifold, ts, seed: int = 0, samples: int = 1):
    """Rows (t, mu) at a fixed base point, minimum over ``samples`` unit directions."""
    rng = np.random.default_rng(seed)
    y = np.array([0.0, 0.0, 1.0]) if M.kind == "sphere2" else np.zeros(M.ambient_dim)
    ws = [M.random_unit_tangent(y, rng) for _ in range(samples)]
    return [(t, min(mu(M, y, w, t) for w in ws)) for t in ts]


def _cmd_run(args) -> int:
    s = _load(args.scenario, args.override_convexity_check)
    if args.seed is not None:
        s = dataclasses.replace(s, seed=args.seed)
    result = sc.run_scenario(s, out_dir=args.out, save_every=args.save_every)
    print(f"{result.verdict} status={result.status} {result.detail}")
    return result.status


def _cmd_check(args) -> int:
    s = _load(args.scenario, args.override_convexity_check)
    print(f"ok {s.name}: {s.manifold.kind}, {s.mesh.kind} n={s.mesh.resolution}, dt={s.dt:.17g}, tolerance={s.tolerance:.17g}")
    return sc.EXIT_OK


def _cmd_mu(args) -> int:
    try:
        M = parse_manifold(args.manifold)
        ts = [float(t) for t in args.t_list.split(",") if t.strip()]
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    print("t,mu")
    for t, value in mu_table(M, ts, seed=args.seed, samples=args.samples):
        print(f"{t:.17g},{value:.17g}")
    return sc.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convexflow", description="Harmonic map heat flow containment checks")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write CSV reports")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help="output directory (default: no files)")
    r.add_argument("--save-every", type=int, default=None)
    r.add_argument("--override-convexity-check", action="store_true")
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check", help="parse and validate a scenario")
    c.add_argument("scenario")
    c.add_argument("--override-convexity-check", action="store_true")
    c.set_defaults(func=_cmd_check)

    m = sub.add_parser("mu-table", help="print mu(w, t) for a model target")
    m.add_argument("manifold", help="sphere2, poincare or flat:<dim>")
    m.add_argument("t_list", help="comma-separated t values")
    m.add_argument("--samples", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=_cmd_mu)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "save_every", None) is not None and args.save_every < 1:
        print("error: --save-every must be >= 1", file=sys.stderr)
        return sc.EXIT_INVALID
    try:
        return args.func(args)
    except ConvexFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return sc.EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
