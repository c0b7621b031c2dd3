"""Graph-convolutional accuracy surrogate with top-k pooling, in plain numpy.

Per conv layer ``l`` on the current (sub)graph with adjacency ``A``::

    H  <- relu(D^-1 (A + I) H W_l + b_l)
    s   = H w_l / |w_l|                     # pooling score per node
    keep the ceil(ratio * n) best nodes     # ties: lower id rank wins
    H  <- H[keep] * tanh(s[keep])           # gated, induced subgraph
    readout_l = [mean(H), max(H)]

The readouts are summed over layers and fed to an MLP whose single output is
squashed by a logistic, so predictions live in (0, 1).

All graphs in a batch with the same node count are processed as one stacked
tensor; every pooling step keeps the same number of nodes, so shapes stay
rectangular. Gradients are written out by hand and checked against finite
differences in the test-suite.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import CollageGraph

MAGIC = b"CPGP"
VERSION = 1


@dataclass(frozen=True)
class PredictorConfig:
    feat_dim: int = 512
    hidden_dim: int = 128
    conv_layers: int = 3
    pool_ratio: float = 0.5
    # mlp_dims[0] is the width of the summed readout (2 * hidden_dim)
    mlp_dims: tuple[int, ...] = (256, 128, 64)

    def __post_init__(self):
        object.__setattr__(self, "mlp_dims", tuple(int(d) for d in self.mlp_dims))
        if self.conv_layers < 1:
            raise ValueError("conv_layers must be >= 1")
        if not 0 < self.pool_ratio <= 1:
            raise ValueError("pool_ratio must be in (0, 1]")
        if not self.mlp_dims:
            raise ValueError("mlp_dims must be nonempty")
        if self.mlp_dims[0] != 2 * self.hidden_dim:
            raise ValueError(
                f"mlp_dims[0]={self.mlp_dims[0]} must equal 2*hidden_dim={2 * self.hidden_dim}"
            )

    def kept(self, n: int) -> int:
        return max(1, math.ceil(self.pool_ratio * n - 1e-9))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, tuple[int, ...]] = {}
        din = self.feat_dim
        for l in range(self.conv_layers):
            out[f"conv{l}.weight"] = (din, self.hidden_dim)
            out[f"conv{l}.bias"] = (self.hidden_dim,)
            out[f"pool{l}.weight"] = (self.hidden_dim,)
            din = self.hidden_dim
        widths = list(self.mlp_dims) + [1]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            out[f"mlp{i}.weight"] = (a, b)
            out[f"mlp{i}.bias"] = (b,)
        return out

    @property
    def n_mlp(self) -> int:
        return len(self.mlp_dims)


@dataclass
class PredictorParams:
    config: PredictorConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        if set(shapes) != set(self.tensors):
            raise ShapeError(f"parameter names {sorted(self.tensors)} != {sorted(shapes)}")
        for name, shape in shapes.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape}, config expects {shape}")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.config.shapes())

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equal(self, other: "PredictorParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.names()
        )


class ShapeError(ValueError):
    pass


class ParamsFormatError(ValueError):
    pass


def init_params(config: PredictorConfig, seed: int = 0) -> PredictorParams:
    rng = np.random.default_rng([seed, 0x6C])
    tensors = {}
    for name, shape in config.shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        elif name.startswith("pool"):
            tensors[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return PredictorParams(config, tensors)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def id_ranks(ids: Sequence[str], k: int) -> np.ndarray:
    """Order-independent tie-break key per node: rank of its id among all ids."""
    if not ids:
        return np.arange(k)
    order = sorted(range(k), key=lambda j: ids[j])
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return rank


def _forward_stack(params: PredictorParams, A, X, rank, keep_cache: bool = False):
    """Forward pass for B graphs of equal size. Returns logits (B,) and a cache."""
    cfg = params.config
    B, n, _ = X.shape
    if X.shape[2] != cfg.feat_dim:
        raise ShapeError(f"feature dim {X.shape[2]} != config feat_dim {cfg.feat_dim}")
    if A.shape != (B, n, n):
        raise ShapeError(f"adjacency {A.shape} does not match features {X.shape}")
    bidx = np.arange(B)[:, None]
    H = X
    readout = np.zeros((B, 2 * cfg.hidden_dim))
    layers = []
    for l in range(cfg.conv_layers):
        W = params[f"conv{l}.weight"]
        b = params[f"conv{l}.bias"]
        w = params[f"pool{l}.weight"]
        Ahat = (A + np.eye(n)) / (A.sum(-1) + 1.0)[..., None]
        M = Ahat @ H
        Z = M @ W + b
        Hr = np.maximum(Z, 0.0)
        nw = np.linalg.norm(w)
        s_raw = Hr @ w
        s = s_raw / nw
        k = cfg.kept(n)
        keep = np.lexsort((rank, -s), axis=-1)[:, :k]
        Hs = Hr[bidx, keep]
        g = np.tanh(s[bidx, keep])
        P = Hs * g[..., None]
        am = P.argmax(axis=1)
        mx = np.take_along_axis(P, am[:, None, :], axis=1)[:, 0]
        readout = readout + np.concatenate([P.mean(axis=1), mx], axis=1)
        if keep_cache:
            layers.append(dict(Ahat=Ahat, M=M, Z=Z, Hr=Hr, s_raw=s_raw, nw=nw,
                               keep=keep, Hs=Hs, g=g, am=am, n=n, k=k))
        A = A[bidx[..., None], keep[:, :, None], keep[:, None, :]]
        rank = rank[bidx, keep]
        H = P
        n = k
    acts = [readout]
    zs = []
    a = readout
    for i in range(cfg.n_mlp):
        z = a @ params[f"mlp{i}.weight"] + params[f"mlp{i}.bias"]
        zs.append(z)
        if i < cfg.n_mlp - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    logits = zs[-1][:, 0]
    cache = dict(layers=layers, acts=acts, zs=zs, B=B) if keep_cache else None
    return logits, cache


def _backward_stack(params: PredictorParams, cache, dlogits: np.ndarray, grads: dict):
    cfg = params.config
    B = cache["B"]
    bidx = np.arange(B)[:, None]
    dz = dlogits[:, None]
    for i in reversed(range(cfg.n_mlp)):
        a = cache["acts"][i]
        grads[f"mlp{i}.weight"] += a.T @ dz
        grads[f"mlp{i}.bias"] += dz.sum(axis=0)
        da = dz @ params[f"mlp{i}.weight"].T
        if i > 0:
            dz = da * (cache["zs"][i - 1] > 0)
    dreadout = da
    h = cfg.hidden_dim
    dmean, dmax = dreadout[:, :h], dreadout[:, h:]
    dP = None
    for l in reversed(range(cfg.conv_layers)):
        c = cache["layers"][l]
        k, n = c["k"], c["n"]
        g, Hs, keep = c["g"], c["Hs"], c["keep"]
        dPl = np.broadcast_to(dmean[:, None, :] / k, Hs.shape).copy()
        np.put_along_axis(
            dPl, c["am"][:, None, :],
            np.take_along_axis(dPl, c["am"][:, None, :], axis=1) + dmax[:, None, :], axis=1,
        )
        if dP is not None:
            dPl += dP
        dHs = dPl * g[..., None]
        dss = (dPl * Hs).sum(-1) * (1.0 - g * g)
        dH = np.zeros_like(c["Hr"])
        dH[bidx, keep] += dHs
        ds = np.zeros((B, n))
        ds[bidx, keep] = dss
        w = params[f"pool{l}.weight"]
        nw = c["nw"]
        dH += ds[..., None] * (w / nw)
        grads[f"pool{l}.weight"] += (
            np.einsum("bn,bnh->h", ds, c["Hr"]) / nw
            - (ds * c["s_raw"]).sum() * w / nw**3
        )
        dZ = dH * (c["Z"] > 0)
        hdim = dZ.shape[-1]
        grads[f"conv{l}.weight"] += c["M"].reshape(-1, c["M"].shape[-1]).T @ dZ.reshape(-1, hdim)
        grads[f"conv{l}.bias"] += dZ.sum(axis=(0, 1))
        dM = dZ @ params[f"conv{l}.weight"].T
        dP = np.swapaxes(c["Ahat"], -1, -2) @ dM


@dataclass(frozen=True)
class LabeledCollage:
    graph: CollageGraph
    y: float


@dataclass
class GraphStack:
    """Graphs of one node count stacked into dense tensors."""

    A: np.ndarray
    X: np.ndarray
    rank: np.ndarray
    y: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "GraphStack":
        return GraphStack(self.A[idx], self.X[idx], self.rank[idx],
                          None if self.y is None else self.y[idx])


def stack_graphs(graphs: Sequence[CollageGraph], ys: Sequence[float] | None = None) -> dict[int, tuple[np.ndarray, GraphStack]]:
    """Group graphs by node count. Values are (original positions, stack)."""
    groups: dict[int, list[int]] = defaultdict(list)
    for pos, gr in enumerate(graphs):
        groups[gr.k].append(pos)
    out = {}
    for k, positions in groups.items():
        A = np.stack([np.asarray(graphs[p].adj, dtype=np.float64) for p in positions])
        X = np.stack([np.asarray(graphs[p].feats, dtype=np.float64) for p in positions])
        rank = np.stack([id_ranks(graphs[p].ids, k) for p in positions])
        y = None if ys is None else np.asarray([ys[p] for p in positions], dtype=np.float64)
        out[k] = (np.asarray(positions), GraphStack(A, X, rank, y))
    return out


def predict_stack(params: PredictorParams, stack: GraphStack) -> np.ndarray:
    logits, _ = _forward_stack(params, stack.A, stack.X, stack.rank)
    return _sigmoid(logits)


def predict(params: PredictorParams, graphs: Sequence[CollageGraph]) -> np.ndarray:
    out = np.empty(len(graphs))
    for positions, stack in stack_graphs(graphs).values():
        out[positions] = predict_stack(params, stack)
    return out


def forward(params: PredictorParams, graph: CollageGraph) -> float:
    """Predicted accuracy of one collage graph, strictly inside (0, 1)."""
    return float(predict(params, [graph])[0])


def zero_grads(params: PredictorParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def stack_loss_and_grad(params: PredictorParams, stacks: Iterable[tuple[np.ndarray, GraphStack]],
                        total: int) -> tuple[float, dict[str, np.ndarray]]:
    """MSE over several stacks (``total`` samples in all) and its exact gradient."""
    grads = zero_grads(params)
    sse = 0.0
    for positions, st in stacks:
        logits, cache = _forward_stack(params, st.A, st.X, st.rank, keep_cache=True)
        yhat = _sigmoid(logits)
        bad = ~np.isfinite(yhat)
        if bad.any():
            first = int(np.asarray(positions)[np.argmax(bad)])
            raise FloatingPointError(f"non-finite prediction for sample {first}")
        err = yhat - st.y
        sse += float(err @ err)
        dlogits = (2.0 / total) * err * yhat * (1.0 - yhat)
        _backward_stack(params, cache, dlogits, grads)
    mse = sse / total
    if not math.isfinite(mse):
        raise FloatingPointError("non-finite loss")
    return mse, grads


def loss_and_grad(params: PredictorParams, batch: Sequence[LabeledCollage]) -> tuple[float, dict[str, np.ndarray]]:
    if not batch:
        raise ValueError("empty batch")
    stacks = stack_graphs([s.graph for s in batch], [s.y for s in batch])
    return stack_loss_and_grad(params, stacks.values(), len(batch))


# -- persistence ------------------------------------------------------------

_HEAD = struct.Struct("<4sI")


def _config_record(cfg: PredictorConfig) -> bytes:
    fields = [cfg.feat_dim, cfg.hidden_dim, cfg.conv_layers, len(cfg.mlp_dims), *cfg.mlp_dims]
    return struct.pack(f"<d{len(fields)}I", cfg.pool_ratio, *fields)


def save_params(params: PredictorParams, path: str | os.PathLike) -> None:
    """Write ``CPGP`` file: header, config, shape table, then float64 LE data."""
    cfg = params.config
    names = params.names()
    parts = [_HEAD.pack(MAGIC, VERSION), _config_record(cfg), struct.pack("<I", len(names))]
    for name in names:
        raw = name.encode()
        shape = params[name].shape
        parts.append(struct.pack(f"<H{len(raw)}sI{len(shape)}I", len(raw), raw, len(shape), *shape))
    for name in names:
        parts.append(params[name].astype("<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_params(path: str | os.PathLike, config: PredictorConfig | None = None) -> PredictorParams:
    data = Path(path).read_bytes()
    try:
        magic, version = _HEAD.unpack_from(data, 0)
        if magic != MAGIC:
            raise ParamsFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ParamsFormatError(f"unsupported version {version}")
        off = _HEAD.size
        (ratio,) = struct.unpack_from("<d", data, off)
        off += 8
        feat, hidden, layers, nm = struct.unpack_from("<4I", data, off)
        off += 16
        mlp = struct.unpack_from(f"<{nm}I", data, off)
        off += 4 * nm
        stored = PredictorConfig(feat, hidden, layers, ratio, tuple(mlp))
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        table = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode()
            off += ln
            (nd,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{nd}I", data, off)
            off += 4 * nd
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            size = int(np.prod(shape)) * 8
            if off + size > len(data):
                raise ParamsFormatError(f"truncated while reading {name}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
            off += size
    except struct.error as exc:
        raise ParamsFormatError(f"truncated params file: {exc}") from exc
    if off != len(data):
        raise ParamsFormatError(f"{len(data) - off} trailing bytes")
    if config is not None and config != stored:
        expected = config.shapes()
        for name, shape in table:
            if expected.get(name) != tuple(shape):
                raise ShapeError(f"{name}: file has {tuple(shape)}, config expects {expected.get(name)}")
        raise ShapeError(f"stored config {stored} != requested {config}")
    return PredictorParams(stored, tensors)
