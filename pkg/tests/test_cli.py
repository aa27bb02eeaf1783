import csv
import json
import textwrap

import numpy as np
import pytest

from convexflow import cli, scenario as sc
from convexflow.errors import ScenarioError

MINIMAL_FLAT = """
schema: 1
target: {kind: flat, dim: 2}
body:
  epsilon: 0.5
  halfspaces:
    - {normal: [-1, 0], offset: 0}
    - {normal: [0, -1], offset: 0}
    - {normal: [1, 1], offset: 1}
mesh: {kind: square, resolution: 9}
initial: {family: random-in-body}
boundary: {family: fixed}
"""

CAP = """
schema: 1
name: cap
seed: 3
target: {kind: sphere2}
body:
  epsilon: 0.3
  balls: [{center: [0, 0, 1], radius: %(radius)s}]
mesh: {kind: interval, resolution: 17}
initial:
  family: geodesic-arc
  start: [0.479425538604203, 0.0, 0.8775825618903728]
  end: [0.0, 0.479425538604203, 0.8775825618903728]
  warp: 0.5
boundary: %(boundary)s
window: [0.0, 0.05]
save_every: 40
"""


def cap(radius=0.7, boundary="{family: fixed}"):
    return CAP % {"radius": radius, "boundary": boundary}


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


# -- parsing ------------------------------------------------------------------------


def test_minimal_scenario_gets_defaults():
    s = sc.parse_scenario(MINIMAL_FLAT)
    assert s.window == (0.0, 1.0) and s.safety == 0.25 and s.save_every == 1 and s.seed == 0
    assert s.tolerance == pytest.approx(10 * (s.mesh.h**2 + s.dt))


def test_convexity_radius_violation_is_rejected():
    with pytest.raises(ScenarioError, match="convexity radius"):
        sc.parse_scenario(cap(radius=1.7))


def test_missing_boundary_is_rejected():
    text = "\n".join(l for l in cap().splitlines() if not l.startswith("boundary"))
    with pytest.raises(ScenarioError, match="boundary"):
        sc.parse_scenario(text)


@pytest.mark.parametrize(
    "edit, where",
    [
        (lambda t: t.replace("schema: 1", "schema: 2"), "schema"),
        (lambda t: t + "\nbogus: 1\n", "bogus"),
        (lambda t: t.replace("kind: interval", "kind: sphere"), "mesh"),
        (lambda t: t.replace("family: geodesic-arc", "family: lava"), "initial.family"),
        (lambda t: t.replace("epsilon: 0.3", "epsilon: -1"), "body"),
        (lambda t: t.replace("[0.0, 0.05]", "[1.0, 0.05]"), "window"),
        (lambda t: t + "\n  : [\n", "malformed"),
    ],
)
def test_diagnostics_name_the_location(edit, where):
    with pytest.raises(ScenarioError, match=where.replace(".", r"\.").replace("[", r"\[")):
        sc.parse_scenario(edit(cap()))


@pytest.mark.parametrize(
    "initial",
    [
        "{family: constant, point: [0, 0, 1]}",
        "{family: great-circle-wander, center: [0, 0, 1], radius: 0.4, turns: 1}",
        "{family: fourier-perturbed, base: [0, 0, 1], amplitude: 0.3, modes: 3}",
        "{family: random-in-body}",
        "{family: radial-bulge, center: [0, 0, 1], inner: 0.5, outer: 0.8}",
    ],
)
def test_initial_families(initial):
    text = cap().replace(
        "initial:\n  family: geodesic-arc\n  start: [0.479425538604203, 0.0, 0.8775825618903728]\n"
        "  end: [0.0, 0.479425538604203, 0.8775825618903728]\n  warp: 0.5",
        "initial: " + initial,
    )
    s = sc.parse_scenario(text)
    values = sc.initial_map(s).values
    np.testing.assert_allclose(np.linalg.norm(values, axis=-1), 1.0, atol=1e-12)


def test_wander_boundary_moves_endpoints():
    s = sc.parse_scenario(cap(boundary="{family: wander, center: [0, 0, 1], angular_speed: 2.0}"))
    b = sc.boundary_trajectory(s, sc.initial_map(s))
    a0, a1 = b(0.0), b(0.5)
    np.testing.assert_allclose(a0, sc.initial_map(s).values[[0, -1]], atol=1e-12)
    # rotation about the pole keeps the polar angle and turns by omega t
    np.testing.assert_allclose(a1[:, 2], a0[:, 2], atol=1e-12)
    assert np.arctan2(a1[0, 1], a1[0, 0]) == pytest.approx(1.0, abs=1e-12)


# -- running ------------------------------------------------------------------------


def test_contained_run_and_reports(tmp_path):
    res = sc.run_scenario(sc.parse_scenario(cap()), out_dir=str(tmp_path))
    assert res.status == 0 and res.verdict == "CONTAINED"
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert rows and all(float(r["sigma_max"]) <= res.report.tolerance for r in rows)
    consts = next(csv.DictReader(open(tmp_path / "constants.csv")))
    assert float(consts["C"]) == pytest.approx(float(consts["D0"]) * float(consts["C0"]))
    assert json.load(open(tmp_path / "verdict.json"))["verdict"] == "CONTAINED"
    traj = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert traj[0] == ["t", "node", "u0", "u1", "u2"]
    assert len(traj) == 1 + 17 * len(rows)


def test_nonconvex_control_fails_the_probe():
    text = cap(radius=1.65).replace("epsilon: 0.3", "epsilon: 0.01")
    with pytest.raises(ScenarioError):
        sc.parse_scenario(text)
    res = sc.run_scenario(sc.parse_scenario(text, override_convexity_check=True))
    assert res.status == sc.EXIT_HYPOTHESIS and "probe" in res.detail


def test_boundary_outside_control():
    res = sc.run_scenario(sc.parse_scenario(cap(boundary="{family: push-out, node: 0, distance: 0.2}")))
    assert res.status == sc.EXIT_HYPOTHESIS
    assert res.report.sigma_max_series.max() >= 0.2 - 1e-9


def test_empty_trajectory_gives_header_only_csv(tmp_path):
    s = sc.parse_scenario(cap())
    sc.emit_report(s, sc.RunResult(sc.EXIT_HYPOTHESIS, "HYPOTHESIS_VIOLATED", "x"), str(tmp_path))
    for name, header in (
        ("trajectory.csv", "t,node,u0,u1,u2\n"),
        ("report.csv", "t,sigma_max,energy,h_transform_max\n"),
        ("constants.csv", "D0,C0,C,epsilon,R,dt,h\n"),
    ):
        assert (tmp_path / name).read_text() == header


def test_same_seed_gives_identical_bytes(tmp_path):
    text = MINIMAL_FLAT + "window: [0, 0.01]\nsave_every: 10\nseed: 11\n"
    for d in ("a", "b"):
        sc.run_scenario(sc.parse_scenario(text), out_dir=str(tmp_path / d))
    for name in ("trajectory.csv", "report.csv", "constants.csv", "verdict.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seventeen_digit_output(tmp_path):
    sc.run_scenario(sc.parse_scenario(cap()), out_dir=str(tmp_path))
    row = next(csv.DictReader(open(tmp_path / "constants.csv")))
    assert float(row["R"]) == np.pi / 2


# -- command line --------------------------------------------------------------------


def test_cli_run_and_check(tmp_path, capsys):
    path = write(tmp_path, cap())
    assert cli.main(["check", path]) == 0
    assert cli.main(["run", path, "--out", str(tmp_path / "out"), "--seed", "5", "--save-every", "20"]) == 0
    assert "CONTAINED" in capsys.readouterr().out
    assert (tmp_path / "out" / "verdict.txt").read_text().startswith("CONTAINED status=0")


def test_cli_exit_codes(tmp_path):
    assert cli.main(["check", write(tmp_path, cap(radius=1.7))]) == sc.EXIT_INVALID
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == sc.EXIT_INVALID
    nonconvex = write(tmp_path, cap(radius=1.65).replace("epsilon: 0.3", "epsilon: 0.01"), "nc.yaml")
    assert cli.main(["run", nonconvex]) == sc.EXIT_INVALID
    assert cli.main(["run", nonconvex, "--override-convexity-check"]) == sc.EXIT_HYPOTHESIS
    pushed = write(tmp_path, cap(boundary="{family: push-out, distance: 0.2}"), "po.yaml")
    assert cli.main(["run", pushed]) == sc.EXIT_HYPOTHESIS


def test_cli_mu_table(capsys):
    assert cli.main(["mu-table", "sphere2", "0.1,0.3"]) == 0
    lines = capsys.readouterr().out.split()
    assert lines[0] == "t,mu"
    t, m = map(float, lines[2].split(","))
    assert t == 0.3 and m == pytest.approx(-np.tan(0.3), abs=1e-8)
    assert cli.main(["mu-table", "poincare", "0.3"]) == 0
    assert float(capsys.readouterr().out.split()[1].split(",")[1]) == pytest.approx(np.tanh(0.3), abs=1e-8)
    assert cli.main(["mu-table", "klein", "0.3"]) == sc.EXIT_INVALID
