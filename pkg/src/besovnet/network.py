"""Data model and forward evaluation for dense ReLU networks, one-sided
stride-one convolution, and residual networks with parallel bottlenecks.

Two residual-network containers exist: :class:`ConvResNeXt` whose paths are
stacks of convolution kernels acting on a ``D x w`` padded signal, and
:class:`DenseResNeXt` whose paths are bias-free dense networks acting on the
padded vector ``[x, 1, 0]``.  Norm accounting is exact: every reported total
is a plain sum of squared stored entries in declaration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def relu(z):
    return np.maximum(z, 0.0)


def affine_apply(W: np.ndarray, b: np.ndarray | None, h: np.ndarray) -> np.ndarray:
    """Column-sweep affine map ``W h + b`` with a fixed accumulation order.

    Accumulates ``W[:, j] * h[j]`` for j ascending and adds the bias last.
    The fixed order makes structurally different but mathematically equal
    layer encodings (e.g. a bias column fed by a constant-1 input) produce
    bit-identical outputs, which the bias-removal transform relies on.

    ``h`` may be a vector ``(in,)`` or a batch ``(n, in)``.
    """
    batched = h.ndim == 2
    hs = h if batched else h[None, :]
    out = np.zeros((hs.shape[0], W.shape[0]))
    for j in range(W.shape[1]):
        out += hs[:, j, None] * W[None, :, j]
    if b is not None:
        out += b[None, :]
    return out if batched else out[0]


@dataclass
class DenseNet:
    """Feedforward ReLU network: layers of ``(weight, bias)`` pairs.

    ReLU is applied between layers, never after the last.  A ``None`` bias
    means the layer is bias-free (and contributes no bias entries to norms).
    """

    layers: list[tuple[np.ndarray, np.ndarray | None]]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        clean = []
        prev_out = None
        for idx, (W, b) in enumerate(self.layers):
            W = np.asarray(W, dtype=float)
            if W.ndim != 2:
                raise ValueError(f"layer {idx}: weight must be a matrix")
            if b is not None:
                b = np.asarray(b, dtype=float)
                if b.shape != (W.shape[0],):
                    raise ValueError(f"layer {idx}: bias length {b.shape} != {W.shape[0]}")
            if prev_out is not None and W.shape[1] != prev_out:
                raise ValueError(
                    f"layer {idx}: input width {W.shape[1]} != previous output {prev_out}"
                )
            prev_out = W.shape[0]
            clean.append((W, b))
        self.layers = clean

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def width(self) -> int:
        return max(W.shape[0] for W, _ in self.layers)

    def total_sq_norm(self) -> float:
        total = 0.0
        for W, b in self.layers:
            total += float(np.sum(W * W))
            if b is not None:
                total += float(np.sum(b * b))
        return total

    def is_bias_free(self) -> bool:
        return all(b is None or not np.any(b) for _, b in self.layers)

    def scaled(self, factors) -> "DenseNet":
        """Per-layer scalar rescaling; biases of layer l pick up the product
        of factors up to l so the network stays equivalent up to the overall
        product (exact for bias-free nets by 1-homogeneity)."""
        factors = list(factors)
        if len(factors) != self.depth:
            raise ValueError("need one factor per layer")
        out = []
        running = 1.0
        for (W, b), c in zip(self.layers, factors):
            running *= c
            out.append((W * c, None if b is None else b * running))
        return DenseNet(out)


def dense_forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate ``net`` on a vector ``(in,)`` or batch ``(n, in)``."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input dimension {x.shape[-1]} != network input {net.in_dim}")
    h = x
    last = net.depth - 1
    for idx, (W, b) in enumerate(net.layers):
        h = affine_apply(W, b, h)
        if idx != last:
            h = relu(h)
    return h


@dataclass
class ConvKernel:
    """One-sided stride-one convolution kernel, entries ``(out, K, in)``."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 3:
            raise ValueError("kernel entries must have shape (out_channels, K, in_channels)")
        if self.entries.shape[1] < 1:
            raise ValueError("kernel size K must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.entries.shape[0]

    @property
    def size(self) -> int:
        return self.entries.shape[1]

    @property
    def in_channels(self) -> int:
        return self.entries.shape[2]

    def frob_sq(self) -> float:
        return float(np.sum(self.entries * self.entries))


def conv1d(kernel, z: np.ndarray) -> np.ndarray:
    """One-sided stride-one convolution with zero padding past the right end.

    ``y[i, j] = sum_{k, l} W[j, k, l] * z[i+k-1, l]`` with out-of-range rows
    of ``z`` treated as zero; the output keeps the spatial length of ``z``.
    Accepts ``z`` of shape ``(D, w_in)`` or batched ``(n, D, w_in)``.
    """
    W = kernel.entries if isinstance(kernel, ConvKernel) else np.asarray(kernel, dtype=float)
    z = np.asarray(z, dtype=float)
    batched = z.ndim == 3
    zs = z if batched else z[None, :, :]
    if zs.shape[2] != W.shape[2]:
        raise ValueError(f"input channels {zs.shape[2]} != kernel in-channels {W.shape[2]}")
    K = W.shape[1]
    n, D, w_in = zs.shape
    zp = np.pad(zs, ((0, 0), (0, K - 1), (0, 0)))
    # accumulate term by term in (k, l) order so results match a literal
    # double-sum evaluation bit for bit
    y = np.zeros((n, D, W.shape[0]))
    for k in range(K):
        for l in range(w_in):
            y += zp[:, k : k + D, l, None] * W[None, None, :, k, l]
    return y if batched else y[0]


def conv_path_forward(kernels: list, z: np.ndarray) -> np.ndarray:
    """Apply a bottleneck path: conv, ReLU, ..., conv (no final ReLU)."""
    h = z
    last = len(kernels) - 1
    for idx, k in enumerate(kernels):
        h = conv1d(k, h)
        if idx != last:
            h = relu(h)
    return h


@dataclass(frozen=True)
class NormBudget:
    """Frobenius-norm budget pair for the residual paths and the output map."""

    b_res: float
    b_out: float

    def __post_init__(self):
        if self.b_res < 0 or self.b_out < 0:
            raise ValueError("budgets must be nonnegative")

    def satisfied_by(self, net) -> bool:
        report = norm_report(net)
        return report.b_res_actual <= self.b_res and report.b_out_actual <= self.b_out


@dataclass
class NormReport:
    """Exact squared-norm totals grouped by building block ``(n, m)``."""

    per_block: dict
    b_res_actual: float
    b_out_actual: float


def pad_signal(x: np.ndarray, width: int) -> np.ndarray:
    """Pad ``x`` into a ``D x width`` signal: channel 0 carries the input,
    channel 1 is the all-ones bias carrier, remaining channels start at 0
    and accumulate block outputs."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    xs = x if batched else x[None, :]
    if width < 2:
        raise ValueError("padded signal needs at least 2 channels (input + bias carrier)")
    z = np.zeros((xs.shape[0], xs.shape[1], width))
    z[:, :, 0] = xs
    z[:, :, 1] = 1.0
    return z if batched else z[0]


@dataclass
class ConvResNeXt:
    """Residual network of ``N`` blocks, each summing ``M`` parallel
    convolutional bottlenecks of depth ``L``, with an identity skip and a
    final linear readout on the flattened ``D x w`` representation."""

    n_blocks: int
    paths_per_block: int
    depth_per_path: int
    kernel_size: int
    channels: int
    input_dim: int
    paths: list  # paths[n][m] = list of L kernel arrays (w, K, w)
    w_out: np.ndarray
    readout_indices: list[int] | None = None

    def __post_init__(self):
        N, M, L = self.n_blocks, self.paths_per_block, self.depth_per_path
        if len(self.paths) != N or any(len(block) != M for block in self.paths):
            raise ValueError("paths must be indexed [n][m]")
        clean = []
        for block in self.paths:
            row = []
            for path in block:
                if len(path) != L:
                    raise ValueError("every path must have exactly L kernels")
                kers = [np.asarray(k, dtype=float) for k in path]
                for k in kers:
                    if k.ndim != 3 or k.shape[1] > self.kernel_size:
                        raise ValueError("kernel shape incompatible with declared size")
                for a, b in zip(kers[:-1], kers[1:]):
                    if b.shape[2] != a.shape[0]:
                        raise ValueError("kernel channel dimensions do not compose")
                if kers[0].shape[2] != self.channels or kers[-1].shape[0] != self.channels:
                    raise ValueError("path must map w channels to w channels")
                row.append(kers)
            clean.append(row)
        self.paths = clean
        self.w_out = np.asarray(self.w_out, dtype=float).ravel()
        if self.w_out.size != self.input_dim * self.channels:
            raise ValueError("w_out length must equal D * w (flattened representation)")

    @property
    def pad_width(self) -> int:
        return self.channels

    def block_stack(self, z: np.ndarray) -> np.ndarray:
        """Apply the residual blocks to a padded signal (no readout)."""
        for block in self.paths:
            acc = z.copy()
            for path in block:
                acc = acc + conv_path_forward(path, z)
            z = acc
        return z

    def forward(self, x: np.ndarray) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        batched = x.ndim == 2
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.input_dim}")
        z = pad_signal(x, self.channels)
        z = self.block_stack(z)
        flat = z.reshape(z.shape[0], -1) if batched else z.ravel()
        out = flat @ self.w_out
        return out if batched else float(out)

    def per_block_sq_norms(self) -> dict:
        report = {}
        for n, block in enumerate(self.paths):
            for m, path in enumerate(block):
                report[(n, m)] = float(sum(np.sum(k * k) for k in path))
        return report

    def scale_residual(self, c: float) -> "ConvResNeXt":
        """Scale all path kernels by ``c`` and the readout by ``c**-L``;
        by 1-homogeneity of ReLU the represented function is unchanged."""
        scaled = [[[k * c for k in path] for path in block] for block in self.paths]
        return ConvResNeXt(
            n_blocks=self.n_blocks,
            paths_per_block=self.paths_per_block,
            depth_per_path=self.depth_per_path,
            kernel_size=self.kernel_size,
            channels=self.channels,
            input_dim=self.input_dim,
            paths=scaled,
            w_out=self.w_out * float(c) ** (-self.depth_per_path),
            readout_indices=self.readout_indices,
        )

    def to_json(self) -> str:
        doc = {
            "arch": {
                "form": "conv",
                "N": self.n_blocks,
                "M": self.paths_per_block,
                "L": self.depth_per_path,
                "K": self.kernel_size,
                "w": self.channels,
                "D": self.input_dim,
            },
            "paths": [
                [[k.tolist() for k in path] for path in block] for block in self.paths
            ],
            "w_out": self.w_out.tolist(),
            "meta": {"readout_indices": self.readout_indices},
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "ConvResNeXt":
        doc = json.loads(text)
        arch = doc["arch"]
        if arch.get("form") != "conv":
            raise ValueError("not a convolutional network document")
        return ConvResNeXt(
            n_blocks=arch["N"],
            paths_per_block=arch["M"],
            depth_per_path=arch["L"],
            kernel_size=arch["K"],
            channels=arch["w"],
            input_dim=arch["D"],
            paths=[
                [[np.asarray(k) for k in path] for path in block]
                for block in doc["paths"]
            ],
            w_out=np.asarray(doc["w_out"]),
            readout_indices=doc["meta"].get("readout_indices"),
        )


def pad_vector(x: np.ndarray, width: int) -> np.ndarray:
    """Pad ``x`` into ``[x, 1, 0, ..., 0]`` of length ``width``."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    xs = x if batched else x[None, :]
    if width < xs.shape[1] + 2:
        raise ValueError("padded width must cover input, bias 1 and an accumulator")
    z = np.zeros((xs.shape[0], width))
    z[:, : xs.shape[1]] = xs
    z[:, xs.shape[1]] = 1.0
    return z if batched else z[0]


@dataclass
class DenseResNeXt:
    """Residual network whose building blocks are bias-free dense networks
    acting on the padded vector ``[x, 1, 0...]``; blocks write only the
    accumulator coordinates, the skip carries everything else."""

    blocks: list  # blocks[n][m] = DenseNet, in/out dim = pad_width
    input_dim: int
    pad_width: int
    w_out: np.ndarray
    readout_indices: list[int] | None = None

    def __post_init__(self):
        for row in self.blocks:
            for net in row:
                if net.in_dim != self.pad_width or net.out_dim != self.pad_width:
                    raise ValueError("blocks must map the padded vector to itself")
        self.w_out = np.asarray(self.w_out, dtype=float).ravel()
        if self.w_out.size != self.pad_width:
            raise ValueError("w_out length must equal the padded width")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def paths_per_block(self) -> int:
        return max((len(row) for row in self.blocks), default=0)

    @property
    def depth_per_path(self) -> int:
        depths = {net.depth for row in self.blocks for net in row}
        if len(depths) > 1:
            raise ValueError("blocks have inconsistent depth")
        return depths.pop() if depths else 0

    def block_stack(self, z: np.ndarray) -> np.ndarray:
        for row in self.blocks:
            acc = z.copy()
            for net in row:
                acc = acc + dense_forward(net, z)
            z = acc
        return z

    def forward(self, x: np.ndarray) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        batched = x.ndim == 2
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.input_dim}")
        z = pad_vector(x, self.pad_width)
        z = self.block_stack(z)
        out = z @ self.w_out
        return out if batched else float(out)

    def per_block_sq_norms(self) -> dict:
        return {
            (n, m): net.total_sq_norm()
            for n, row in enumerate(self.blocks)
            for m, net in enumerate(row)
        }

    def scale_residual(self, c: float) -> "DenseResNeXt":
        L = self.depth_per_path
        scaled = [
            [net.scaled([c] * net.depth) for net in row] for row in self.blocks
        ]
        return DenseResNeXt(
            blocks=scaled,
            input_dim=self.input_dim,
            pad_width=self.pad_width,
            w_out=self.w_out * float(c) ** (-L),
            readout_indices=self.readout_indices,
        )

    def to_json(self) -> str:
        doc = {
            "arch": {
                "form": "dense",
                "N": self.n_blocks,
                "M": self.paths_per_block,
                "L": self.depth_per_path,
                "K": 1,
                "w": self.pad_width,
                "D": self.input_dim,
            },
            "paths": [
                [
                    [[W.tolist(), None if b is None else b.tolist()] for W, b in net.layers]
                    for net in row
                ]
                for row in self.blocks
            ],
            "w_out": self.w_out.tolist(),
            "meta": {
                "readout_indices": self.readout_indices,
                "pad_width": self.pad_width,
            },
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "DenseResNeXt":
        doc = json.loads(text)
        arch = doc["arch"]
        if arch.get("form") != "dense":
            raise ValueError("not a dense-block network document")
        blocks = [
            [
                DenseNet(
                    [
                        (np.asarray(W), None if b is None else np.asarray(b))
                        for W, b in net
                    ]
                )
                for net in row
            ]
            for row in doc["paths"]
        ]
        return DenseResNeXt(
            blocks=blocks,
            input_dim=arch["D"],
            pad_width=doc["meta"]["pad_width"],
            w_out=np.asarray(doc["w_out"]),
            readout_indices=doc["meta"].get("readout_indices"),
        )


def network_from_json(text: str):
    form = json.loads(text)["arch"].get("form")
    if form == "conv":
        return ConvResNeXt.from_json(text)
    if form == "dense":
        return DenseResNeXt.from_json(text)
    raise ValueError(f"unknown network form {form!r}")


def resnext_forward(net, x) -> float | np.ndarray:
    """Forward evaluation for either residual-network form."""
    return net.forward(x)


def norm_report(net) -> NormReport:
    """Per-building-block squared norms plus the two budget totals."""
    per_block = net.per_block_sq_norms()
    b_res = float(sum(per_block.values()))
    b_out = float(np.sum(net.w_out * net.w_out))
    return NormReport(per_block=per_block, b_res_actual=b_res, b_out_actual=b_out)
