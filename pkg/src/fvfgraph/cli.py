"""Command-line front end.

Exit codes: 0 success, 2 bad input (usage, missing file, validation), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fvf as fvfmod
from .geomfeat import default_did_config, features_to_csv, geometric_features, load_did_config
from .graphgen import MODES, build_graph, cell_centroid_graph, graph_from_json, graph_to_json
from .mesh import load_mesh, mesh_to_json
from .nn import load_parameters, read_checkpoint, save_checkpoint
from .plot import svg_heatmap
from .train import (
    COARSE_RESOLUTION,
    CRITERIA,
    FEATURE_SETS,
    FINE_RESOLUTION,
    SCHEMES,
    FvgcNet,
    Scaling,
    TrainConfig,
    field_to_csv,
    input_features,
    load_dataset,
    loss,
    make_samples,
    save_dataset,
    synthetic_cylinder_dataset,
    train_model,
)

RECONSTRUCT_TOL = 1e-8


class InputError(Exception):
    """Bad or missing input; maps to exit code 2."""


def write_atomic(path, data: str | bytes) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise InputError(f"output directory {path.parent} does not exist")
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file: {path}")
    return p


def _did_config(args):
    if args.did_segments:
        return load_did_config(_existing(args.did_segments), args.inf_value)
    return default_did_config(4.0 if args.inf_value is None else args.inf_value)


def read_table(path) -> tuple[list[str], np.ndarray]:
    """CSV with a ``node_id`` first column; returns the remaining headers and values."""
    with open(_existing(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "node_id":
        raise InputError(f"{path}: expected a node_id header")
    try:
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(-1, len(rows[0]) - 1)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return rows[0][1:], values


def cmd_graph(args) -> int:
    graph = build_graph(load_mesh(_existing(args.mesh)), args.mode)
    write_atomic(args.out, graph_to_json(graph))
    print(f"{graph.n_nodes} nodes, {graph.n_edges} directed edges")
    return 0


def cmd_features(args) -> int:
    config = _did_config(args)
    mesh = load_mesh(_existing(args.mesh))
    feats = geometric_features(mesh, build_graph(mesh, args.mode), config, threads=args.threads)
    write_atomic(args.out, features_to_csv(feats))
    return 0


def cmd_fvf(args) -> int:
    mesh = load_mesh(_existing(args.mesh))
    attrs = fvfmod.fvf_attributes(mesh, cell_centroid_graph(mesh))
    write_atomic(args.out, fvfmod.fvf_to_csv(attrs))
    return 0


def cmd_reconstruct(args) -> int:
    try:
        graph = graph_from_json(_existing(args.graph).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.graph}: {exc}") from None
    attrs = fvfmod.fvf_from_csv(_existing(args.fvf).read_text())
    ref = load_mesh(_existing(args.ref)) if args.ref else None
    rebuilt = fvfmod.reconstruct_mesh(graph, attrs)
    if args.out:
        write_atomic(args.out, mesh_to_json(rebuilt))
    if ref is None:
        print(f"reconstructed {rebuilt.n_points} points, {rebuilt.n_cells} cells")
        return 0
    err = fvfmod.reconstruction_error(ref, rebuilt)
    print(f"max abs node error {err:.3e}")
    return 0 if err < RECONSTRUCT_TOL else 3


def cmd_gen_data(args) -> int:
    if args.cases < 1:
        raise InputError("--cases must be positive")
    cases = synthetic_cylinder_dataset(args.cases, (tuple(args.fine), tuple(args.coarse)), seed=args.seed)
    save_dataset(args.out, cases, k=args.k)
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


def _split(n: int, n_val: int) -> int:
    if not 0 <= n_val < n:
        raise InputError(f"--val must be in [0, {n - 1}] for {n} cases")
    return n - n_val


def cmd_train(args) -> int:
    config = TrainConfig(args.scheme, args.loss, args.epochs, args.lr, args.seed)
    cases = load_dataset(_existing(args.data))
    n_train = _split(len(cases), args.val)
    residual = config.scheme == "residual"
    raw = [input_features(c, args.features, args.fvf, residual, args.k) for c in cases]
    scaling = Scaling.fit(raw[:n_train])
    samples = make_samples(cases, raw, scaling, residual, args.k)
    model = FvgcNet(samples[0].x.shape[1], width=args.width, seed=args.seed)
    hist = train_model(model, samples[:n_train], samples[n_train:], config)
    meta = {"train": vars(config), "net": model.config, "features": args.features, "fvf": args.fvf,
            "k": args.k, "scaling": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(scaling).items()}}
    tmp = Path(args.out).with_name(f".{Path(args.out).name}.tmp{os.getpid()}")
    save_checkpoint(tmp, model, meta)
    os.replace(tmp, args.out)
    for e in range(0, len(hist.train_loss), max(len(hist.train_loss) // 10, 1)):
        print(f"epoch {e + 1:5d}  train {hist.train_loss[e]:.6g}  val {hist.val_loss[e]:.6g}")
    print(f"final     train {hist.train_loss[-1]:.6g}  val {hist.val_loss[-1]:.6g}")
    return 0


def _load_model(path):
    try:
        meta, params = read_checkpoint(_existing(path))
        net = meta["net"]
        model = FvgcNet(net["d_in"], net["d_out"], net["width"], net["k"], tuple(net["hidden"]), net["seed"])
        load_parameters(model, params)
        sc = meta["scaling"]
        scaling = Scaling(tuple(sc["x_mean"]), tuple(sc["x_std"]), float(sc["p_scale"]), tuple(sc["q_scale"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: unreadable checkpoint ({exc})") from None
    return meta, model, scaling


def cmd_eval(args) -> int:
    meta, model, scaling = _load_model(args.checkpoint)
    cases = load_dataset(_existing(args.data))
    residual = meta["train"]["scheme"] == "residual"
    raw = [input_features(c, meta["features"], meta["fvf"], residual, meta["k"]) for c in cases]
    if raw[0][0].shape[1] != model.config["d_in"]:
        raise InputError("dataset features do not match the checkpoint")
    samples = make_samples(cases, raw, scaling, residual, meta["k"])
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    values = []
    for n, s in enumerate(samples):
        pred = model.predict(s, residual)
        if not np.all(np.isfinite(pred)):
            raise FloatingPointError(f"non-finite prediction for case {n}")
        values.append(loss(args.loss, s.target, pred))
        print(f"case {n:3d}  {args.loss} {values[-1]:.6g}")
        if args.out:
            write_atomic(Path(args.out) / f"pred_{n:03d}.csv", field_to_csv(pred))
    print(f"mean {args.loss} {np.mean(values):.6g}")
    return 0


def cmd_plot(args) -> int:
    mesh = load_mesh(_existing(args.mesh))
    headers, values = read_table(args.field)
    if args.channel not in headers:
        raise InputError(f"{args.field} has no column {args.channel!r}; columns are {headers}")
    col = values[:, headers.index(args.channel)]
    if args.subtract:
        h2, v2 = read_table(args.subtract)
        if args.channel not in h2 or len(v2) != len(col):
            raise InputError(f"{args.subtract} does not match {args.field}")
        col = col - v2[:, h2.index(args.channel)]
    if args.abs:
        col = np.abs(col)
    n_nodes = cell_centroid_graph(mesh).n_nodes
    if len(col) not in (mesh.n_cells, n_nodes):
        raise InputError(f"field has {len(col)} rows; mesh has {mesh.n_cells} cells and {n_nodes} graph nodes")
    write_atomic(args.out, svg_heatmap(mesh, col, title=args.channel))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fvfgraph", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("graph", cmd_graph, "export the graph of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--mode", choices=MODES, default="cell-centroid")
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "SDF, SV and DID per graph node")
    p.add_argument("--mesh", required=True)
    p.add_argument("--mode", choices=MODES, default="cell-centroid")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--did-segments", help="JSON list of [lo, hi] angle pairs in radians")
    g.add_argument("--did-default", action="store_true", help="8 overlapping quarter-circle arcs (default)")
    p.add_argument("--inf-value", type=float, help="large value for empty segments (default 4, or the file's value)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("fvf", cmd_fvf, "finite volume features of the cell-centroid graph")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)

    p = add("reconstruct", cmd_reconstruct, "rebuild a mesh from its graph and FVF")
    p.add_argument("--graph", required=True)
    p.add_argument("--fvf", required=True)
    p.add_argument("--ref", help="reference mesh; exit 0 only if the error is below 1e-8")
    p.add_argument("--out", help="write the rebuilt mesh JSON here")

    p = add("gen-data", cmd_gen_data, "synthetic cylinder-flow dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=25)
    p.add_argument("--fine", type=int, nargs=2, default=FINE_RESOLUTION, metavar=("N_R", "N_THETA"))
    p.add_argument("--coarse", type=int, nargs=2, default=COARSE_RESOLUTION, metavar=("N_R", "N_THETA"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=3)

    for name, fn, help_ in (("train", cmd_train, "train a two-layer FVGC model"),
                            ("eval", cmd_eval, "evaluate a checkpoint on a dataset")):
        p = add(name, fn, help_)
        p.add_argument("--data", required=True)
        p.add_argument("--loss", choices=CRITERIA, default="mse")
        if name == "train":
            p.add_argument("--out", required=True, help="checkpoint path")
            p.add_argument("--scheme", choices=SCHEMES, default="direct")
            p.add_argument("--epochs", type=int, default=300)
            p.add_argument("--lr", type=float, default=0.03)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--k", type=int, default=3)
            p.add_argument("--val", type=int, default=5, help="number of trailing cases held out")
            p.add_argument("--width", type=int, default=16)
            p.add_argument("--features", choices=FEATURE_SETS, default="geo")
            p.add_argument("--fvf", action=argparse.BooleanOptionalAction, default=True)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--out", help="directory for per-case prediction CSVs")

    p = add("plot", cmd_plot, "SVG heatmap of one column of a node CSV")
    p.add_argument("--mesh", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--subtract", help="CSV whose column is subtracted first")
    p.add_argument("--abs", action="store_true")
    p.add_argument("--out", required=True)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (FloatingPointError, fvfmod.ReconstructionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (InputError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
