"""Small float64 neural-network engine with hand-written backprop.

Covers the finite volume graph convolution (gated neighbor sums, several
filters concatenated, then an MLP), a SAGE layer that uses it as its
aggregator, and the invariant edge convolution with FVF-augmented attributes.

Edges are directed pairs ``(i, j)``: node ``i`` receives a message from its
neighbor ``j`` using the edge attribute ``q_ij``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

Q_DIM = 6


class ShapeError(ValueError):
    pass


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {name}")


@dataclass(frozen=True, eq=False)
class Neighborhoods:
    """Receiver/sender index arrays plus CSR incidence matrices (nodes x edges).

    ``scatter`` sums edge rows into receivers; ``gather_t`` sums them into senders.
    CSR products visit each row's entries in edge order, so sums are reproducible.
    """

    receivers: np.ndarray
    senders: np.ndarray
    n_nodes: int
    scatter: sp.csr_matrix
    gather_t: sp.csr_matrix

    @classmethod
    def from_edges(cls, edges, n_nodes: int) -> "Neighborhoods":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ShapeError("edge index out of range")
        E = len(edges)
        ones, cols = np.ones(E), np.arange(E)
        scatter = sp.csr_matrix((ones, (edges[:, 0], cols)), shape=(n_nodes, E))
        gather_t = sp.csr_matrix((ones, (edges[:, 1], cols)), shape=(n_nodes, E))
        return cls(edges[:, 0].copy(), edges[:, 1].copy(), int(n_nodes), scatter, gather_t)

    @property
    def n_edges(self) -> int:
        return len(self.receivers)

    def has_neighbors(self) -> np.ndarray:
        return np.bincount(self.receivers, minlength=self.n_nodes) > 0


def _as_nbrs(neighborhoods, n_nodes: int) -> Neighborhoods:
    if isinstance(neighborhoods, Neighborhoods):
        if neighborhoods.n_nodes != n_nodes:
            raise ShapeError(f"neighborhoods cover {neighborhoods.n_nodes} nodes, features have {n_nodes}")
        return neighborhoods
    return Neighborhoods.from_edges(neighborhoods, n_nodes)


class Module:
    """Parameters live in ``self.params``; gradients accumulate in ``self.grads``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def named_parameters(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, v) for k, v in self.params.items()]
        for name, child in self.children.items():
            out += child.named_parameters(f"{prefix}{name}.")
        return out

    def named_grads(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, self.grads[k]) for k in self.params]
        for name, child in self.children.items():
            out += child.named_grads(f"{prefix}{name}.")
        return out

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)
        for child in self.children.values():
            child.zero_grad()

    def n_params(self) -> int:
        return sum(v.size for _, v in self.named_parameters())


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.params["W"] = _uniform(rng, d_in, (d_in, d_out))
        if bias:
            self.params["b"] = _uniform(rng, d_in, (d_out,))
        self.zero_grad()
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"Linear expects (*, {self.d_in}), got {x.shape}")
        self._x = x
        y = x @ self.params["W"]
        if "b" in self.params:
            y = y + self.params["b"]
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grads["W"] += self._x.T @ g
        if "b" in self.params:
            self.grads["b"] += g.sum(axis=0)
        return g @ self.params["W"].T


class MLP(Module):
    """Linear layers with ReLU in between; the last layer is linear."""

    def __init__(self, sizes, rng: np.random.Generator):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = [Linear(a, b, rng) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.children = {f"l{k}": layer for k, layer in enumerate(self.layers)}
        self._masks: list[np.ndarray] | None = None

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        masks = []
        for k, layer in enumerate(self.layers):
            x = layer.forward(x)
            if k < len(self.layers) - 1:
                m = x > 0
                masks.append(m)
                x = x * m
        self._masks = masks
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._masks is None:
            raise RuntimeError("backward called before forward")
        for k in range(len(self.layers) - 1, -1, -1):
            if k < len(self.layers) - 1:
                g = g * self._masks[k]
            g = self.layers[k].backward(g)
        return g


def fvgc_filter(h, p, q, U, b, neighborhoods) -> np.ndarray:
    """One filter: ``out_i = sum_j ReLU(q_ij @ U + b) * (h_j (+) p_j)``; isolated nodes get zeros."""
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float)
    nb = _as_nbrs(neighborhoods, len(h))
    hp = np.column_stack([h, p])
    if U.shape != (q.shape[1], hp.shape[1]) or b.shape != (hp.shape[1],) or len(q) != nb.n_edges:
        raise ShapeError(f"filter shapes U{U.shape} b{b.shape} q{q.shape} vs features {hp.shape}")
    gate = np.maximum(q @ U + b, 0.0)
    return nb.scatter @ (gate * hp[nb.senders])


class FvgcLayer(Module):
    """``k`` gated filters over ``h (+) p``, concatenated, followed by an MLP."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, k: int = 3, hidden=(16,),
                 q_dim: int = Q_DIM):
        super().__init__()
        if k < 1:
            raise ValueError("need at least one filter")
        self.d_in, self.d_out, self.k, self.q_dim = d_in, d_out, k, q_dim
        width = d_in + 1
        for m in range(k):
            self.params[f"U{m}"] = _uniform(rng, q_dim, (q_dim, width))
            self.params[f"b{m}"] = _uniform(rng, q_dim, (width,))
        self.mlp = MLP((k * width, *hidden, d_out), rng)
        self.children = {"mlp": self.mlp}
        self.zero_grad()
        self._cache = None

    def aggregate(self, h, p, q, nb: Neighborhoods) -> np.ndarray:
        """Concatenated filter outputs (before the MLP), caching what backward needs."""
        if h.shape[1] != self.d_in or q.shape != (nb.n_edges, self.q_dim) or len(p) != len(h):
            raise ShapeError(f"FVGC expects h (*, {self.d_in}), q ({nb.n_edges}, {self.q_dim}); "
                             f"got h{h.shape} p{np.shape(p)} q{q.shape}")
        _check_finite("FVGC inputs", h)
        hp = np.column_stack([h, p])
        # all k filters at once: column block m belongs to filter m
        hps = hp[nb.senders][:, None, :]
        U = np.concatenate([self.params[f"U{m}"] for m in range(self.k)], axis=1)
        b = np.concatenate([self.params[f"b{m}"] for m in range(self.k)])
        pre = q @ U + b
        gate = np.maximum(pre, 0.0)
        E, width = len(q), hp.shape[1]
        self._cache = (q, hps, gate, nb, hp.shape)
        return nb.scatter @ (gate.reshape(E, self.k, width) * hps).reshape(E, -1)

    def aggregate_backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        q, hps, gate, nb, shape = self._cache
        E, width = len(q), shape[1]
        g_msg = g[nb.receivers]
        g_edges = (g_msg * gate).reshape(E, self.k, width).sum(axis=1)
        g_pre = (g_msg.reshape(E, self.k, width) * hps).reshape(E, -1)
        g_pre *= gate > 0
        gU = q.T @ g_pre
        gb = g_pre.sum(axis=0)
        for m in range(self.k):
            cols = slice(m * width, (m + 1) * width)
            self.grads[f"U{m}"] += gU[:, cols]
            self.grads[f"b{m}"] += gb[cols]
        g_hp = nb.gather_t @ g_edges
        return g_hp[:, :-1], g_hp[:, -1]

    def forward(self, h, p, q, neighborhoods) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        nb = _as_nbrs(neighborhoods, len(h))
        return self.mlp.forward(self.aggregate(h, np.asarray(p, dtype=float).reshape(-1), np.asarray(q, float), nb))

    def backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns gradients w.r.t. ``h`` and ``p``."""
        return self.aggregate_backward(self.mlp.backward(g))


def fvgc_forward(h, p, q, layer: FvgcLayer, neighborhoods) -> np.ndarray:
    return layer.forward(h, p, q, neighborhoods)


class SageFvfLayer(Module):
    """SAGE update whose neighbor aggregator is an FVGC layer, plus a linear self term.

    Nodes without neighbors receive the self term only.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, k: int = 3, hidden=(16,)):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.fvgc = FvgcLayer(d_in, d_out, rng, k=k, hidden=hidden)
        self.self_lin = Linear(d_in, d_out, rng, bias=False)
        self.children = {"fvgc": self.fvgc, "self": self.self_lin}
        self._mask = None

    def forward(self, h, p, q, neighborhoods) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        nb = _as_nbrs(neighborhoods, len(h))
        self._mask = nb.has_neighbors()[:, None]
        return self.fvgc.forward(h, p, q, nb) * self._mask + self.self_lin.forward(h)

    def backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        g_h, g_p = self.fvgc.backward(g * self._mask)
        return g_h + self.self_lin.backward(g), g_p


def sage_fvf_aggregate(h, p, q, layer: SageFvfLayer, neighborhoods) -> np.ndarray:
    return layer.forward(h, p, q, neighborhoods)


def augment_features(h_nodes, h_edges, p, q) -> tuple[np.ndarray, np.ndarray]:
    """Append FV node attributes to node features and FV edge attributes to edge features."""
    h_nodes = np.asarray(h_nodes, dtype=float)
    h_edges = np.asarray(h_edges, dtype=float)
    p = np.asarray(p, dtype=float).reshape(len(h_nodes), -1)
    q = np.asarray(q, dtype=float).reshape(len(h_edges), -1)
    return np.concatenate([h_nodes, p], axis=1), np.concatenate([h_edges, q], axis=1)


class IveFvfLayer(Module):
    """Invariant edge convolution over FVF-augmented attributes.

    ``x*_e = q_e (+) x_e`` and ``x*_v = x_v (+) p``; edges update from the mean
    and half absolute difference of their endpoint features, nodes from their
    own features and the sum of updated incident edges.
    """

    def __init__(self, d_v: int, d_e: int, d_v_out: int, d_e_out: int, rng: np.random.Generator,
                 hidden: int = 128, q_dim: int = Q_DIM, p_dim: int = 1):
        super().__init__()
        self.d_v, self.d_e, self.q_dim, self.p_dim = d_v, d_e, q_dim, p_dim
        dv_s, de_s = d_v + p_dim, d_e + q_dim
        self.f_e = MLP((2 * dv_s + de_s, hidden, d_e_out), rng)
        self.f_v = MLP((dv_s + d_e_out, hidden, d_v_out), rng)
        self.children = {"f_e": self.f_e, "f_v": self.f_v}
        self._cache = None

    def forward(self, x_v, x_e, p, q, edges) -> tuple[np.ndarray, np.ndarray]:
        x_v = np.asarray(x_v, dtype=float)
        x_e = np.asarray(x_e, dtype=float).reshape(len(q), -1)
        if x_v.shape[1] != self.d_v or x_e.shape[1] != self.d_e:
            raise ShapeError(f"IVE expects node dim {self.d_v}, edge dim {self.d_e}; got {x_v.shape}, {x_e.shape}")
        nb = _as_nbrs(edges, len(x_v))
        q = np.asarray(q, dtype=float).reshape(nb.n_edges, -1)
        xe_s = np.concatenate([q, x_e], axis=1)
        p_shape = np.shape(p)
        xv_s = np.concatenate([x_v, np.asarray(p, dtype=float).reshape(len(x_v), -1)], axis=1)
        v1, v2 = xv_s[nb.receivers], xv_s[nb.senders]
        diff = v1 - v2
        e_in = np.concatenate([0.5 * (v1 + v2), 0.5 * np.abs(diff), xe_s], axis=1)
        e_out = self.f_e.forward(e_in)
        agg = nb.scatter @ e_out
        v_out = self.f_v.forward(np.concatenate([xv_s, agg], axis=1))
        self._cache = (nb, np.sign(diff), xv_s.shape[1], q.shape[1], p_shape)
        return v_out, e_out

    def backward(self, g_v: np.ndarray, g_e: np.ndarray | None = None):
        """Returns gradients w.r.t. ``(x_v, x_e, p, q)``."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        nb, sgn, dv_s, dq, p_shape = self._cache
        g_vin = self.f_v.backward(g_v)
        g_xv_s = g_vin[:, :dv_s].copy()
        g_eout = g_vin[:, dv_s:][nb.receivers]
        if g_e is not None:
            g_eout = g_eout + g_e
        g_ein = self.f_e.backward(g_eout)
        g_mean, g_abs, g_xe_s = g_ein[:, :dv_s], g_ein[:, dv_s:2 * dv_s], g_ein[:, 2 * dv_s:]
        g_v1 = 0.5 * g_mean + 0.5 * g_abs * sgn
        g_v2 = 0.5 * g_mean - 0.5 * g_abs * sgn
        g_xv_s += nb.scatter @ g_v1 + nb.gather_t @ g_v2
        return g_xv_s[:, :self.d_v], g_xe_s[:, dq:], g_xv_s[:, self.d_v:].reshape(p_shape), g_xe_s[:, :dq]


def ive_fvf_forward(x_v, x_e, p, q, layer: IveFvfLayer, edges) -> tuple[np.ndarray, np.ndarray]:
    return layer.forward(x_v, x_e, p, q, edges)


def gradcheck(loss_fn: Callable[[], float], tensors: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
              step: float = 1e-5) -> float:
    """Largest norm-wise relative error between analytic and central-difference gradients.

    ``tensors`` are perturbed in place and restored.
    """
    worst = 0.0
    for name, t in tensors.items():
        num = np.zeros_like(t)
        flat, nflat = t.reshape(-1), num.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn()
            flat[k] = orig - step
            down = loss_fn()
            flat[k] = orig
            nflat[k] = (up - down) / (2 * step)
        a = analytic[name]
        if a.shape != t.shape:
            raise ShapeError(f"gradient for {name} has shape {a.shape}, tensor has {t.shape}")
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - num) / denom))
    return worst


def save_checkpoint(path, module: Module, config: dict | None = None) -> None:
    """JSON manifest line (config + parameter names/shapes), then little-endian float64 data."""
    named = module.named_parameters()
    manifest = {"config": config or {}, "params": [{"name": n, "shape": list(v.shape)} for n, v in named]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for _, v in named:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = fh.readline()
        data = fh.read()
    manifest = json.loads(header.decode("utf-8"))
    out, offset = {}, 0
    for entry in manifest["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(entry["shape"]).copy()
        offset += 8 * n
    if offset != len(data):
        raise ValueError(f"checkpoint holds {len(data)} bytes of data, manifest describes {offset}")
    return manifest["config"], out


def load_parameters(module: Module, params: dict[str, np.ndarray]) -> None:
    for name, arr in module.named_parameters():
        if name not in params or params[name].shape != arr.shape:
            raise ShapeError(f"checkpoint lacks parameter {name} with shape {arr.shape}")
        arr[...] = params[name]

