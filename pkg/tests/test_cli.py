import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from fvfgraph.cli import run
from fvfgraph.mesh import load_mesh, mesh_to_json
from fvfgraph.meshgen import random_delaunay_with_hole
from fvfgraph.plot import HIGH, LOW, ramp
from fvfgraph.train import cylinder_case, field_to_csv, upsample_knn

FILL = re.compile(r'<polygon points="[^"]*" fill="#([0-9a-f]{6})"/>')


def fills(svg: str) -> list[str]:
    return FILL.findall(svg)


def ramp_position(hex_color: str) -> float:
    r = int(hex_color[:2], 16)
    return (r - LOW[0]) / (HIGH[0] - LOW[0])


@pytest.fixture
def mesh_file(tmp_path):
    mesh = random_delaunay_with_hole(np.random.default_rng(7), 80)
    path = tmp_path / "mesh.json"
    path.write_text(mesh_to_json(mesh))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_graph_command(tmp_path, mesh_file):
    out = tmp_path / "g.json"
    assert run(["graph", "--mesh", str(mesh_file), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    mesh = load_mesh(mesh_file)
    assert len(data["nodes"]) > mesh.n_cells
    assert run(["graph", "--mesh", str(mesh_file), "--mode", "mesh-node", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["nodes"]) == mesh.n_points


def test_features_command(tmp_path, mesh_file):
    out = tmp_path / "f.csv"
    assert run(["features", "--mesh", str(mesh_file), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["node_id", "sdf", "sv_x", "sv_y"] + [f"did_{i}" for i in range(8)]
    vals = np.array(rows[1:], dtype=float)
    assert np.array_equal(vals[:, 0], np.arange(len(vals)))
    assert np.all(np.isfinite(vals))


def test_features_custom_segments(tmp_path, mesh_file):
    seg = tmp_path / "seg.json"
    seg.write_text(json.dumps([[-1.0, 1.0], [2.0, 4.0]]))
    out = tmp_path / "f.csv"
    assert run(["features", "--mesh", str(mesh_file), "--did-segments", str(seg),
                "--inf-value", "9", "--out", str(out)]) == 0
    assert read_rows(out)[0][-2:] == ["did_0", "did_1"]


def test_features_threads_agree(tmp_path, mesh_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["features", "--mesh", str(mesh_file), "--out", str(a)]) == 0
    assert run(["features", "--mesh", str(mesh_file), "--threads", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_fvf_and_reconstruct(tmp_path, mesh_file, capsys):
    g, f, rebuilt = tmp_path / "g.json", tmp_path / "fvf.csv", tmp_path / "r.json"
    assert run(["graph", "--mesh", str(mesh_file), "--out", str(g)]) == 0
    assert run(["fvf", "--mesh", str(mesh_file), "--out", str(f)]) == 0
    capsys.readouterr()
    code = run(["reconstruct", "--graph", str(g), "--fvf", str(f), "--ref", str(mesh_file), "--out", str(rebuilt)])
    assert code == 0
    assert "max abs node error" in capsys.readouterr().out
    assert load_mesh(rebuilt).n_cells == load_mesh(mesh_file).n_cells


def test_reconstruct_fails_against_perturbed_reference(tmp_path, mesh_file):
    g, f = tmp_path / "g.json", tmp_path / "fvf.csv"
    run(["graph", "--mesh", str(mesh_file), "--out", str(g)])
    run(["fvf", "--mesh", str(mesh_file), "--out", str(f)])
    data = json.loads(mesh_file.read_text())
    data["points"][0][0] += 1e-4
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps(data))
    assert run(["reconstruct", "--graph", str(g), "--fvf", str(f), "--ref", str(ref)]) == 3


def test_bad_inputs_exit_2(tmp_path, mesh_file):
    out = str(tmp_path / "x")
    assert run(["graph", "--mesh", str(tmp_path / "missing.json"), "--out", out]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"points": [[0, 0], [1, 0], [0, 1]], "cells": [[0, 1, 5]]}))
    assert run(["fvf", "--mesh", str(bad), "--out", out]) == 2
    bad.write_text("{not json")
    assert run(["graph", "--mesh", str(bad), "--out", out]) == 2
    assert run(["graph", "--mesh", str(mesh_file), "--out", str(tmp_path / "nodir" / "g.json")]) == 2
    assert run(["features", "--mesh", str(mesh_file), "--threads", "0", "--out", out]) == 2
    with pytest.raises(SystemExit) as exc:
        run(["graph", "--mesh", str(mesh_file), "--out", out, "--bogus"])
    assert exc.value.code == 2
    assert not Path(out).exists()


@pytest.mark.parametrize("cmd", ["graph", "features", "fvf"])
def test_outputs_idempotent_and_inputs_untouched(tmp_path, mesh_file, cmd):
    before = mesh_file.read_bytes()
    a, b = tmp_path / "a", tmp_path / "b"
    assert run([cmd, "--mesh", str(mesh_file), "--out", str(a)]) == 0
    assert run([cmd, "--mesh", str(mesh_file), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert mesh_file.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b", "mesh.json"]


def test_data_train_eval_roundtrip(tmp_path):
    data, ckpt, preds = tmp_path / "data", tmp_path / "model.ckpt", tmp_path / "preds"
    assert run(["gen-data", "--out", str(data), "--cases", "3", "--fine", "10", "50",
                "--coarse", "5", "12", "--seed", "2"]) == 0
    assert len(list(data.glob("case_*"))) == 3
    for scheme in ("direct", "residual"):
        assert run(["train", "--data", str(data), "--out", str(ckpt), "--epochs", "2",
                    "--val", "1", "--width", "4", "--scheme", scheme]) == 0
        assert run(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--loss", "rmse",
                    "--out", str(preds)]) == 0
        rows = read_rows(preds / "pred_000.csv")
        assert rows[0] == ["node_id", "u_x", "u_y", "p"]
        assert np.all(np.isfinite(np.array(rows[1:], dtype=float)))


def test_train_rejects_bad_split(tmp_path):
    data = tmp_path / "data"
    run(["gen-data", "--out", str(data), "--cases", "2", "--fine", "10", "50", "--coarse", "5", "12"])
    assert run(["train", "--data", str(data), "--out", str(tmp_path / "m"), "--val", "2", "--epochs", "1"]) == 2
    assert run(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "nothing")]) == 2


def test_train_divergence_exits_3(tmp_path):
    data = tmp_path / "data"
    run(["gen-data", "--out", str(data), "--cases", "2", "--fine", "10", "50", "--coarse", "5", "12"])
    code = run(["train", "--data", str(data), "--out", str(tmp_path / "m"), "--val", "1",
                "--epochs", "50", "--lr", "1e6"])
    assert code == 3
    assert not (tmp_path / "m").exists()


# plotting


def test_constant_field_single_color(tmp_path, mesh_file):
    mesh = load_mesh(mesh_file)
    field = tmp_path / "c.csv"
    field.write_text(field_to_csv(np.full((mesh.n_cells, 3), 2.5)))
    out = tmp_path / "c.svg"
    assert run(["plot", "--mesh", str(mesh_file), "--field", str(field), "--channel", "p", "--out", str(out)]) == 0
    colors = fills(out.read_text())
    assert len(colors) == mesh.n_cells
    assert set(colors) == {"%02x%02x%02x" % tuple(ramp(0.0))}


def test_plot_extremes_and_determinism(tmp_path, mesh_file):
    mesh = load_mesh(mesh_file)
    vals = np.random.default_rng(3).normal(size=(mesh.n_cells, 3))
    field = tmp_path / "f.csv"
    field.write_text(field_to_csv(vals))
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    args = ["plot", "--mesh", str(mesh_file), "--field", str(field), "--channel", "u_y"]
    assert run(args + ["--out", str(a)]) == 0
    assert run(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    colors = fills(a.read_text())
    assert colors[int(np.argmin(vals[:, 1]))] == "%02x%02x%02x" % LOW
    assert colors[int(np.argmax(vals[:, 1]))] == "%02x%02x%02x" % HIGH


def test_plot_bad_inputs(tmp_path, mesh_file):
    mesh = load_mesh(mesh_file)
    field = tmp_path / "f.csv"
    field.write_text(field_to_csv(np.zeros((mesh.n_cells - 1, 3))))
    base = ["plot", "--mesh", str(mesh_file), "--field", str(field), "--out", str(tmp_path / "o.svg")]
    assert run(base + ["--channel", "p"]) == 2
    field.write_text(field_to_csv(np.zeros((mesh.n_cells, 3))))
    assert run(base + ["--channel", "rho"]) == 2
    assert not (tmp_path / "o.svg").exists()


def test_cylinder_residual_mostly_dark(tmp_path):
    """|fine - upsampled coarse| pressure sits in the bottom quarter of the ramp on most cells."""
    case = cylinder_case(1.0, 1.0)
    up = upsample_knn(case.coarse_field.values, case.coarse_graph.positions, case.fine_graph.positions)
    (tmp_path / "mesh.json").write_text(mesh_to_json(case.fine_mesh))
    (tmp_path / "gt.csv").write_text(field_to_csv(case.fine_field.values))
    (tmp_path / "up.csv").write_text(field_to_csv(up))
    out = tmp_path / "res.svg"
    assert run(["plot", "--mesh", str(tmp_path / "mesh.json"), "--field", str(tmp_path / "gt.csv"),
                "--subtract", str(tmp_path / "up.csv"), "--channel", "p", "--abs", "--out", str(out)]) == 0
    t = np.array([ramp_position(c) for c in fills(out.read_text())])
    assert len(t) == case.fine_mesh.n_cells
    assert np.mean(t < 0.25) >= 0.8
