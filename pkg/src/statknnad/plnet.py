"""Small piecewise-linear feature extractors (affine, ReLU, 1-d max-pool).

Inside the region where every ReLU sign and every pooling winner is fixed, the network
is an affine map ``W x + B``. That region is a polytope given by linear inequalities,
and along the line ``a_i + b_i z`` those become linear inequalities in z.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .events import DistanceQuadratic, Inequalities, Tag, quadratics_from_blocks
from .exceptions import DataError, DimensionError
from .model import LineParam


@dataclass(frozen=True, eq=False)
class Affine:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        b = np.asarray(self.bias, dtype=float).ravel()
        if b.shape[0] != w.shape[0]:
            raise DimensionError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("network weights must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int
    stride: int

    def n_out(self, n_in: int) -> int:
        return (n_in - self.window) // self.stride + 1

    def windows(self, n_in: int) -> np.ndarray:
        """Index matrix: row j lists the inputs of output j."""
        starts = np.arange(self.n_out(n_in)) * self.stride
        return starts[:, None] + np.arange(self.window)[None, :]


Layer = Union[Affine, ReLU, MaxPool]


@dataclass(frozen=True, eq=False)
class PLNetwork:
    layers: tuple[Layer, ...]
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_dims", self._check_dims())

    def _check_dims(self) -> tuple[int, ...]:
        dims = [self.input_dim]
        for layer in self.layers:
            cur = dims[-1]
            if isinstance(layer, Affine):
                if layer.weight.shape[1] != cur:
                    raise DimensionError(
                        f"affine layer expects {layer.weight.shape[1]} inputs, gets {cur}"
                    )
                dims.append(layer.weight.shape[0])
            elif isinstance(layer, ReLU):
                dims.append(cur)
            elif isinstance(layer, MaxPool):
                if layer.window < 1 or layer.stride < 1 or layer.window > cur:
                    raise DimensionError(f"bad pooling window {layer} for width {cur}")
                dims.append(layer.n_out(cur))
            else:
                raise TypeError(f"unknown layer {layer!r}")
        return tuple(dims)

    @property
    def dims(self) -> tuple[int, ...]:
        return self._dims

    @property
    def output_dim(self) -> int:
        return self._dims[-1]

    @property
    def is_affine(self) -> bool:
        return not any(isinstance(layer, (ReLU, MaxPool)) for layer in self.layers)


@dataclass(frozen=True)
class ActivationPattern:
    """Per layer: bool mask for ReLU, winner offsets for MaxPool, None for Affine.

    Arrays carry a leading batch axis when produced by :func:`forward_batch`.
    """

    entries: tuple

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern) or len(self.entries) != len(other.entries):
            return False
        return all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in zip(self.entries, other.entries)
        )

    def __getitem__(self, i) -> "ActivationPattern":
        """Slice a batched pattern down to one instance."""
        return ActivationPattern(tuple(None if e is None else e[i] for e in self.entries))

    def matches(self, other: "ActivationPattern") -> np.ndarray:
        """Rowwise equality of a batched pattern against a single pattern."""
        ok = None
        for a, b in zip(self.entries, other.entries):
            if a is None:
                continue
            eq = np.all(a == b, axis=-1)
            ok = eq if ok is None else ok & eq
        return ok


def forward_batch(net: PLNetwork, X) -> tuple[np.ndarray, ActivationPattern]:
    """Forward pass for rows of ``X``; pattern arrays have a leading batch axis."""
    h = np.atleast_2d(np.asarray(X, dtype=float))
    if h.shape[1] != net.input_dim:
        raise DimensionError(f"input has {h.shape[1]} features, network expects {net.input_dim}")
    entries = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = h @ layer.weight.T + layer.bias
            entries.append(None)
        elif isinstance(layer, ReLU):
            active = h > 0  # exact zero counts as inactive
            h = np.where(active, h, 0.0)
            entries.append(active)
        else:
            idx = layer.windows(h.shape[1])
            vals = h[:, idx]
            win = np.argmax(vals, axis=2)  # lowest offset on ties
            h = np.take_along_axis(vals, win[:, :, None], axis=2)[:, :, 0]
            entries.append(win)
    return h, ActivationPattern(tuple(entries))


def forward(net: PLNetwork, x) -> tuple[np.ndarray, ActivationPattern]:
    x = np.asarray(x, dtype=float).ravel()
    h, pattern = forward_batch(net, x[None, :])
    return h[0], pattern[0]


def _walk(net: PLNetwork, pattern: ActivationPattern):
    """Yield (layer, entry, W, B) with (W, B) the affine map *before* that layer."""
    W = np.eye(net.input_dim)
    B = np.zeros(net.input_dim)
    if len(pattern.entries) != len(net.layers):
        raise DimensionError("pattern does not match network depth")
    for layer, entry in zip(net.layers, pattern.entries):
        yield layer, entry, W, B
        if isinstance(layer, Affine):
            W = layer.weight @ W
            B = layer.weight @ B + layer.bias
        elif isinstance(layer, ReLU):
            mask = np.asarray(entry, dtype=bool)
            if mask.shape != B.shape:
                raise DimensionError("ReLU mask has the wrong width")
            W = W * mask[:, None]
            B = B * mask
        else:
            idx = layer.windows(B.shape[0])
            win = np.asarray(entry, dtype=int)
            if win.shape != (idx.shape[0],) or np.any(win < 0) or np.any(win >= layer.window):
                raise DimensionError("pooling winners out of range")
            rows = idx[np.arange(idx.shape[0]), win]
            W = W[rows]
            B = B[rows]
    yield None, None, W, B


def affine_map(net: PLNetwork, pattern: ActivationPattern) -> tuple[np.ndarray, np.ndarray]:
    """(W, B) with ``forward(x) == W @ x + B`` for every x showing ``pattern``."""
    *_, (_, _, W, B) = _walk(net, pattern)
    return W, B


def polytope_ineqs(net: PLNetwork, pattern: ActivationPattern) -> tuple[np.ndarray, np.ndarray]:
    """Rows (c, c0) with ``c @ x + c0 <= 0`` exactly on the pattern's region."""
    C, C0 = [], []
    for layer, entry, W, B in _walk(net, pattern):
        if isinstance(layer, ReLU):
            # active: pre > 0  ->  -pre <= 0 ; inactive: pre <= 0
            sign = np.where(np.asarray(entry, dtype=bool), -1.0, 1.0)
            C.append(sign[:, None] * W)
            C0.append(sign * B)
        elif isinstance(layer, MaxPool):
            idx = layer.windows(B.shape[0])
            win = np.asarray(entry, dtype=int)
            winners = idx[np.arange(idx.shape[0]), win]
            losers = np.ones(idx.shape, dtype=bool)
            losers[np.arange(idx.shape[0]), win] = False
            lose_idx = idx[losers]
            win_idx = np.repeat(winners, layer.window - 1)
            # loser - winner <= 0
            C.append(W[lose_idx] - W[win_idx])
            C0.append(B[lose_idx] - B[win_idx])
    if not C:
        return np.zeros((0, net.input_dim)), np.zeros(0)
    C, C0 = np.vstack(C), np.concatenate(C0)
    # units fed only by dead ReLUs give 0 <= 0; such rows constrain nothing
    live = np.any(C != 0, axis=1) | (C0 != 0)
    return C[live], C0[live]


def _moving_blocks(line: LineParam) -> np.ndarray:
    _, b = line.blocks()
    return np.flatnonzero(np.any(b != 0.0, axis=1))


def dnn_events(net: PLNetwork, line: LineParam, moving=None) -> Inequalities:
    """Keep every instance's activation pattern fixed along the line.

    Blocks whose direction is zero do not move with z; their constraints are constant
    and already satisfied, so only the moving blocks are emitted.
    """
    if net.is_affine:
        return Inequalities.empty()
    a, b = line.blocks()
    moving = _moving_blocks(line) if moving is None else np.asarray(moving, dtype=int)
    if moving.size == 0:
        return Inequalities.empty()
    _, patterns = forward_batch(net, line.at(line.z_obs).reshape(a.shape)[moving])
    betas, gammas = [], []
    for row, blk in enumerate(moving):
        C, c0 = polytope_ineqs(net, patterns[row])
        betas.append(C @ b[blk])
        gammas.append(C @ a[blk] + c0)
    return Inequalities.of(0.0, np.concatenate(betas), np.concatenate(gammas), Tag.DNN_POLYTOPE)


def latent_lines(net: PLNetwork, line: LineParam) -> tuple[np.ndarray, np.ndarray]:
    """Latent offsets and directions per block, valid while all patterns stay fixed."""
    a, b = line.blocks()
    y = line.at(line.z_obs).reshape(a.shape)
    offsets, _ = forward_batch(net, y)
    directions = np.zeros_like(offsets)
    moving = _moving_blocks(line)
    if moving.size:
        _, patterns = forward_batch(net, y[moving])
        for row, blk in enumerate(moving):
            W, B = affine_map(net, patterns[row])
            offsets[blk] = W @ a[blk] + B
            directions[blk] = W @ b[blk]
    return offsets, directions


def latent_distance_quadratics(net: PLNetwork, line: LineParam) -> DistanceQuadratic:
    """Squared latent distances test-to-i as quadratics in z (valid inside the DNN event)."""
    return quadratics_from_blocks(*latent_lines(net, line))


def random_network(
    rng: np.random.Generator,
    input_dim: int,
    hidden: tuple[int, ...] = (16,),
    output_dim: int = 4,
    pool: int | None = 2,
) -> PLNetwork:
    """Random-weight net: [Affine, ReLU] per hidden width, optional pooling, final Affine."""
    layers: list[Layer] = []
    width = input_dim
    for h in hidden:
        layers.append(Affine(rng.normal(size=(h, width)) / np.sqrt(width), 0.1 * rng.normal(size=h)))
        layers.append(ReLU())
        width = h
    if pool and pool > 1 and width >= pool:
        layers.append(MaxPool(pool, pool))
        width = MaxPool(pool, pool).n_out(width)
    layers.append(Affine(rng.normal(size=(output_dim, width)) / np.sqrt(width), 0.1 * rng.normal(size=output_dim)))
    return PLNetwork(tuple(layers), input_dim)


def to_dict(net: PLNetwork) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            layers.append({"type": "affine", "weight": layer.weight.tolist(), "bias": layer.bias.tolist()})
        elif isinstance(layer, ReLU):
            layers.append({"type": "relu"})
        else:
            layers.append({"type": "maxpool", "window": layer.window, "stride": layer.stride})
    return {"format": "plnet", "version": 1, "input_dim": net.input_dim, "layers": layers}


def from_dict(obj: dict) -> PLNetwork:
    try:
        layers: list[Layer] = []
        for spec in obj["layers"]:
            kind = spec["type"]
            if kind == "affine":
                layers.append(Affine(np.asarray(spec["weight"], dtype=float), np.asarray(spec["bias"], dtype=float)))
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "maxpool":
                layers.append(MaxPool(int(spec["window"]), int(spec["stride"])))
            else:
                raise DataError(f"unknown layer type {kind!r}")
        return PLNetwork(tuple(layers), int(obj["input_dim"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed network description: {exc}") from exc


def save(net: PLNetwork, path) -> None:
    Path(path).write_text(json.dumps(to_dict(net)))


def load(path) -> PLNetwork:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(obj)
