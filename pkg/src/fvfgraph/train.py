"""Synthetic cylinder-flow data, losses, kNN upsampling and plain gradient-descent training."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .fvf import fvf_attributes
from .geomfeat import DIDConfig, default_did_config, geometric_features
from .graphgen import Graph, cell_centroid_graph
from .mesh import Mesh2D, load_mesh, mesh_to_json
from .meshgen import annulus_mesh
from .nn import FvgcLayer, Module, Neighborhoods

CHANNELS = ("u_x", "u_y", "p")
SCHEMES = ("direct", "residual")
CRITERIA = ("mae", "mse", "rmse")
FEATURE_SETS = ("sdf", "geo")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"training diverged at epoch {epoch} (loss {value})")
        self.epoch = epoch


@dataclass(frozen=True, eq=False)
class FlowField:
    values: np.ndarray
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.channels):
            raise ValueError(f"field of shape {v.shape} does not match channels {self.channels}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "direct"
    loss: str = "mse"
    epochs: int = 300
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.loss not in CRITERIA:
            raise ValueError(f"loss must be one of {CRITERIA}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.lr >= 0 or not np.isfinite(self.lr):
            raise ValueError("learning rate must be a finite non-negative number")


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def loss(criterion: str, f_gt, f_hat) -> float:
    """MAE/MSE: mean over nodes of the per-node error summed over channels; RMSE = sqrt(MSE)."""
    return loss_and_grad(criterion, f_gt, f_hat)[0]


def loss_and_grad(criterion: str, f_gt, f_hat) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``f_hat``."""
    gt, hat = _check_pair(f_gt, f_hat)
    gt, hat = gt.reshape(len(gt), -1), hat.reshape(len(hat), -1)
    n = max(len(gt), 1)
    d = hat - gt
    if criterion == "mae":
        return float(np.abs(d).sum() / n), np.sign(d) / n
    mse = float((d * d).sum() / n)
    if criterion == "mse":
        return mse, 2 * d / n
    if criterion == "rmse":
        r = np.sqrt(mse)
        return float(r), (d / (n * r) if r > 0 else np.zeros_like(d))
    raise ValueError(f"unknown criterion {criterion!r}")


def residual_loss(f_gt, f_r_hat, f_lr_up, criterion: str = "mse") -> float:
    r, up = _check_pair(f_r_hat, f_lr_up)
    return loss(criterion, f_gt, r + up)


def upsample_knn(coarse_values, coarse_positions, fine_positions, k: int = 3) -> np.ndarray:
    """Inverse squared-distance weighting over the ``k`` nearest coarse points."""
    cv = np.asarray(coarse_values, dtype=float)
    cp = np.asarray(coarse_positions, dtype=float).reshape(-1, 2)
    fp = np.asarray(fine_positions, dtype=float).reshape(-1, 2)
    if len(cp) == 0:
        raise ValueError("empty coarse point set")
    if len(cv) != len(cp):
        raise ValueError("coarse values and positions differ in length")
    if not 1 <= k <= len(cp):
        raise ValueError(f"k must be in [1, {len(cp)}]")
    d, idx = cKDTree(cp).query(fp, k=k)
    d, idx = d.reshape(len(fp), k), idx.reshape(len(fp), k)
    w = 1.0 / np.maximum(d * d, 1e-12)
    flat = cv.reshape(len(cv), -1)
    out = np.einsum("nk,nkc->nc", w, flat[idx]) / w.sum(axis=1, keepdims=True)
    exact = d[:, 0] == 0
    out[exact] = flat[idx[exact, 0]]
    return out.reshape((len(fp),) + cv.shape[1:])


def potential_flow(points, U: float, R: float) -> np.ndarray:
    """Inviscid flow past a cylinder of radius ``R`` at free-stream ``U``; pressure from Bernoulli (p_inf = 0)."""
    x, y = np.asarray(points, dtype=float).T
    r2 = x * x + y * y
    r4 = r2 * r2
    ux = U * (1 - R * R * (x * x - y * y) / r4)
    uy = -2 * U * R * R * x * y / r4
    p = 0.5 * (U * U - ux * ux - uy * uy)
    return np.stack([ux, uy, p], axis=1)


@dataclass(frozen=True, eq=False)
class CylinderCase:
    U: float
    R: float
    fine_mesh: Mesh2D
    coarse_mesh: Mesh2D
    fine_graph: Graph
    coarse_graph: Graph
    fine_field: FlowField
    coarse_field: FlowField


FINE_RESOLUTION = (24, 64)
COARSE_RESOLUTION = (8, 20)
OUTER_RADIUS = 5.0
GRADING = 1.1


def cylinder_case(U: float, R: float, fine=FINE_RESOLUTION, coarse=COARSE_RESOLUTION,
                  outer: float = OUTER_RADIUS) -> CylinderCase:
    meshes = []
    for n_r, n_theta in (fine, coarse):
        if n_r < 1 or n_theta < 3:
            raise ValueError(f"invalid resolution {(n_r, n_theta)}")
        meshes.append(annulus_mesh(R, outer, n_r, n_theta, GRADING))
    fm, cm = meshes
    if cm.n_cells < 50 or fm.n_cells < 500:
        raise ValueError("resolutions must give at least 50 coarse and 500 fine cells")
    fg, cg = cell_centroid_graph(fm), cell_centroid_graph(cm)
    return CylinderCase(U, R, fm, cm, fg, cg,
                        FlowField(potential_flow(fg.positions, U, R)),
                        FlowField(potential_flow(cg.positions, U, R)))


def synthetic_cylinder_dataset(n_cases: int, mesh_resolutions=(FINE_RESOLUTION, COARSE_RESOLUTION),
                               seed: int = 0) -> list[CylinderCase]:
    """Cases with free-stream speed U in [0.6, 1.4] and cylinder radius R in [0.7, 1.3]."""
    if n_cases < 1:
        raise ValueError("need at least one case")
    fine, coarse = mesh_resolutions
    rng = np.random.default_rng(seed)
    params = rng.uniform([0.6, 0.7], [1.4, 1.3], size=(n_cases, 2))
    return [cylinder_case(float(U), float(R), fine, coarse) for U, R in params]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def field_to_csv(values: np.ndarray, channels=CHANNELS) -> str:
    lines = [",".join(("node_id",) + tuple(channels))]
    lines += [",".join([str(i)] + [repr(float(v)) for v in row]) for i, row in enumerate(values)]
    return "\n".join(lines) + "\n"


def read_field_csv(path) -> FlowField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "node_id":
        raise ValueError(f"{path}: expected a node_id header")
    channels = tuple(rows[0][1:])
    ids = [int(r[0]) for r in rows[1:]]
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: node ids must be 0..N-1 in order")
    return FlowField(np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(-1, len(channels)), channels)


def save_dataset(root, cases: list[CylinderCase], k: int = 3) -> None:
    """One directory per case; ``lr_upsampled.csv`` holds the coarse field upsampled to the fine nodes."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for n, case in enumerate(cases):
        d = root / f"case_{n:03d}"
        d.mkdir(exist_ok=True)
        _atomic_write(d / "fine_mesh.json", mesh_to_json(case.fine_mesh))
        _atomic_write(d / "coarse_mesh.json", mesh_to_json(case.coarse_mesh))
        _atomic_write(d / "fine_field.csv", field_to_csv(case.fine_field.values))
        _atomic_write(d / "coarse_field.csv", field_to_csv(case.coarse_field.values))
        up = upsample_knn(case.coarse_field.values, case.coarse_graph.positions, case.fine_graph.positions, k)
        _atomic_write(d / "lr_upsampled.csv", field_to_csv(up))
        manifest = {"U": case.U, "R": case.R,
                    "fine_cells": case.fine_mesh.n_cells, "coarse_cells": case.coarse_mesh.n_cells}
        _atomic_write(d / "manifest.json", json.dumps(manifest, indent=1))


def load_dataset(root) -> list[CylinderCase]:
    root = Path(root)
    dirs = sorted(p for p in root.glob("case_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no case directories under {root}")
    cases = []
    for d in dirs:
        manifest = json.loads((d / "manifest.json").read_text())
        fm, cm = load_mesh(d / "fine_mesh.json"), load_mesh(d / "coarse_mesh.json")
        fg, cg = cell_centroid_graph(fm), cell_centroid_graph(cm)
        ff, cf = read_field_csv(d / "fine_field.csv"), read_field_csv(d / "coarse_field.csv")
        if len(ff) != fg.n_nodes or len(cf) != cg.n_nodes:
            raise ValueError(f"{d}: field length does not match graph node count")
        cases.append(CylinderCase(float(manifest["U"]), float(manifest["R"]), fm, cm, fg, cg, ff, cf))
    return cases


@dataclass(frozen=True, eq=False)
class GraphSample:
    """Model inputs and targets for one case; ``base`` is added to the output in the residual scheme."""

    x: np.ndarray
    p: np.ndarray
    q: np.ndarray
    nbrs: Neighborhoods
    target: np.ndarray
    base: np.ndarray


def input_features(case: CylinderCase, features: str = "geo", fvf: bool = True, lr_input: bool = False,
                   k: int = 3, did_config: DIDConfig | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw node features, node attribute and edge attribute for a case.

    Node features are position, free-stream speed and either SDF or SV plus DID.
    Without FVF the edge attribute is the relative position of the neighbor,
    zero-padded to the FVF width, and the node attribute is zero.
    """
    g = case.fine_graph
    geo = geometric_features(case.fine_mesh, g, did_config or default_did_config())
    cols = [g.positions, np.full((g.n_nodes, 1), case.U)]
    if features == "sdf":
        cols.append(geo.sdf[:, None])
    elif features == "geo":
        cols += [geo.sv, geo.did]
    else:
        raise ValueError(f"features must be one of {FEATURE_SETS}")
    if lr_input:
        cols.append(upsample_knn(case.coarse_field.values, case.coarse_graph.positions, g.positions, k))
    x = np.column_stack(cols)
    if fvf:
        attr = fvf_attributes(case.fine_mesh, g)
        return x, attr.p, attr.q
    rel = g.positions[g.edges[:, 1]] - g.positions[g.edges[:, 0]]
    return x, np.zeros(g.n_nodes), np.column_stack([rel, np.zeros((g.n_edges, 4))])


@dataclass(frozen=True)
class Scaling:
    """Per-column standardization of node features; RMS scaling of p and q (keeps q antisymmetric)."""

    x_mean: tuple[float, ...]
    x_std: tuple[float, ...]
    p_scale: float
    q_scale: tuple[float, ...]

    @classmethod
    def fit(cls, raw: list[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> "Scaling":
        X = np.concatenate([r[0] for r in raw])
        P = np.concatenate([r[1] for r in raw])
        Q = np.concatenate([r[2] for r in raw])
        std = X.std(axis=0)
        q_rms = np.sqrt((Q * Q).mean(axis=0))
        p_rms = float(np.sqrt((P * P).mean()))
        return cls(tuple(X.mean(axis=0)), tuple(np.where(std > 0, std, 1.0)),
                   p_rms if p_rms > 0 else 1.0, tuple(np.where(q_rms > 0, q_rms, 1.0)))

    def apply(self, x, p, q):
        return ((x - np.array(self.x_mean)) / np.array(self.x_std), p / self.p_scale, q / np.array(self.q_scale))


def make_samples(cases: list[CylinderCase], raw, scaling: Scaling, residual: bool, k: int = 3) -> list[GraphSample]:
    out = []
    for case, (x, p, q) in zip(cases, raw):
        g = case.fine_graph
        xs, ps, qs = scaling.apply(x, p, q)
        base = (upsample_knn(case.coarse_field.values, case.coarse_graph.positions, g.positions, k)
                if residual else np.zeros_like(case.fine_field.values))
        out.append(GraphSample(xs, ps, qs, Neighborhoods.from_edges(g.edges, g.n_nodes), case.fine_field.values, base))
    return out


class FvgcNet(Module):
    """Two FVGC layers with a ReLU between them."""

    def __init__(self, d_in: int, d_out: int = 3, width: int = 32, k: int = 3, hidden=(16,), seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = {"d_in": d_in, "d_out": d_out, "width": width, "k": k, "hidden": list(hidden), "seed": seed}
        self.l1 = FvgcLayer(d_in, width, rng, k=k, hidden=hidden)
        self.l2 = FvgcLayer(width, d_out, rng, k=k, hidden=hidden)
        self.children = {"l1": self.l1, "l2": self.l2}
        self._mask = None

    def forward(self, s: GraphSample) -> np.ndarray:
        a = self.l1.forward(s.x, s.p, s.q, s.nbrs)
        self._mask = a > 0
        return self.l2.forward(a * self._mask, s.p, s.q, s.nbrs)

    def backward(self, g: np.ndarray) -> None:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        g_a, _ = self.l2.backward(g)
        self.l1.backward(g_a * self._mask)

    def predict(self, s: GraphSample, residual: bool) -> np.ndarray:
        out = self.forward(s)
        return out + s.base if residual else out


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def first_epoch_below(self, threshold: float) -> int | None:
        """1-based epoch at which validation loss first reaches ``threshold``."""
        for e, v in enumerate(self.val_loss, start=1):
            if v <= threshold:
                return e
        return None


def evaluate(model: FvgcNet, samples: list[GraphSample], config: TrainConfig) -> float:
    residual = config.scheme == "residual"
    return float(np.mean([loss(config.loss, s.target, model.predict(s, residual)) for s in samples]))


def train_model(model: FvgcNet, train: list[GraphSample], val: list[GraphSample], config: TrainConfig,
                stop_below: float | None = None) -> TrainResult:
    """Full-batch gradient descent on the mean per-case loss.

    Train loss is measured before each update, validation loss after it.
    With ``stop_below``, training ends once validation loss reaches it.
    Non-finite losses raise ``TrainingDiverged``.
    """
    residual = config.scheme == "residual"
    result = TrainResult()
    params = [v for _, v in model.named_parameters()]
    for epoch in range(1, config.epochs + 1):
        model.zero_grad()
        total = 0.0
        try:
            for s in train:
                value, g = loss_and_grad(config.loss, s.target, model.predict(s, residual))
                total += value
                model.backward(g / len(train))
        except FloatingPointError as exc:
            raise TrainingDiverged(epoch, float("nan")) from exc
        total /= len(train)
        if not np.isfinite(total):
            raise TrainingDiverged(epoch, total)
        for v, (_, gv) in zip(params, model.named_grads()):
            v -= config.lr * gv
        try:
            val_value = evaluate(model, val, config) if val else float("nan")
        except FloatingPointError as exc:
            raise TrainingDiverged(epoch, float("nan")) from exc
        if val and not np.isfinite(val_value):
            raise TrainingDiverged(epoch, val_value)
        result.train_loss.append(total)
        result.val_loss.append(val_value)
        if stop_below is not None and val_value <= stop_below:
            break
    return result


def experiment_data(n_train: int = 20, n_val: int = 5, seed: int = 0, features: str = "geo", fvf: bool = True,
                    lr_input: bool = False, residual: bool = False, k: int = 3, cases=None):
    """Generate cases, compute features, fit scaling on the training split; returns (train, val, scaling)."""
    cases = cases or synthetic_cylinder_dataset(n_train + n_val, seed=seed)
    raw = [input_features(c, features, fvf, lr_input, k) for c in cases]
    scaling = Scaling.fit(raw[:n_train])
    samples = make_samples(cases, raw, scaling, residual, k)
    return samples[:n_train], samples[n_train:n_train + n_val], scaling


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
