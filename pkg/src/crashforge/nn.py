"""From-scratch convolutional steering regressor.

Fixed architecture: five valid-padding conv layers and four fully connected
layers mapping a normalized 66x200 grayscale image to one steering value in
[-1, 1] (label = degrees / 30). Convolutions run as im2col matrix products;
gradients are exact analytic backprop, checked elsewhere against central
finite differences.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import RngStream

INPUT_HEIGHT = 66
INPUT_WIDTH = 200
STEER_NORM_DEG = 30.0

# (kind, ...) rows: conv = (in_c, out_c, kernel, stride), fc = (in, out)
CONV_LAYERS = (
    (1, 24, 5, 2),
    (24, 36, 5, 2),
    (36, 48, 5, 2),
    (48, 64, 3, 1),
    (64, 64, 3, 1),
)
FLATTEN_SIZE = 1152
FC_LAYERS = ((FLATTEN_SIZE, 100), (100, 50), (50, 10), (10, 1))


class ShapeMismatchError(Exception):
    pass


class NonFiniteLossError(Exception):
    pass


class SpecHashMismatchError(Exception):
    pass


class CheckpointFormatError(Exception):
    pass


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def shape_chain() -> list[tuple[int, int, int]]:
    """(channels, height, width) after each conv layer; validates the chain."""
    c, h, w = 1, INPUT_HEIGHT, INPUT_WIDTH
    chain = []
    for in_c, out_c, k, s in CONV_LAYERS:
        if in_c != c:
            raise ShapeMismatchError(f"conv expects {in_c} channels, chain has {c}")
        c, h, w = out_c, _conv_out(h, k, s), _conv_out(w, k, s)
        if h <= 0 or w <= 0:
            raise ShapeMismatchError("conv output collapsed to zero size")
        chain.append((c, h, w))
    if c * h * w != FLATTEN_SIZE:
        raise ShapeMismatchError(f"flatten is {c * h * w}, expected {FLATTEN_SIZE}")
    return chain


def spec_hash() -> bytes:
    """Stable digest of the architecture, embedded in checkpoints."""
    text = "conv:" + ";".join(",".join(map(str, l)) for l in CONV_LAYERS)
    text += f"|input:{INPUT_HEIGHT}x{INPUT_WIDTH}|fc:" + ";".join(
        ",".join(map(str, l)) for l in FC_LAYERS
    )
    return hashlib.sha256(text.encode("ascii")).digest()


def parameter_shapes() -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for in_c, out_c, k, _ in CONV_LAYERS:
        shapes.append((out_c, in_c, k, k))
        shapes.append((out_c,))
    for fan_in, fan_out in FC_LAYERS:
        shapes.append((fan_out, fan_in))
        shapes.append((fan_out,))
    return shapes


def parameter_count() -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes())


def xavier_init(rng: RngStream, dtype=np.float32) -> list[np.ndarray]:
    """Uniform Xavier weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    fan_in = in_channels*k*k and fan_out = out_channels*k*k for conv layers.
    Draw order is layer by layer, weights in C order, so results are
    reproducible for a given stream.
    """
    params: list[np.ndarray] = []

    def uniform_tensor(shape, bound):
        n = int(np.prod(shape))
        values = np.empty(n, dtype=np.float64)
        for i in range(n):
            values[i] = bound * (2.0 * rng.next_float() - 1.0)
        return values.reshape(shape).astype(dtype)

    for in_c, out_c, k, _ in CONV_LAYERS:
        bound = np.sqrt(6.0 / (in_c * k * k + out_c * k * k))
        params.append(uniform_tensor((out_c, in_c, k, k), bound))
        params.append(np.zeros(out_c, dtype=dtype))
    for fan_in, fan_out in FC_LAYERS:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(uniform_tensor((fan_out, fan_in), bound))
        params.append(np.zeros(fan_out, dtype=dtype))
    return params


def normalize_images(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [N,H,W] -> normalized [N,1,H,W] in [-1, 1]."""
    if images.ndim != 3 or images.shape[1:] != (INPUT_HEIGHT, INPUT_WIDTH):
        raise ShapeMismatchError(f"expected [N,{INPUT_HEIGHT},{INPUT_WIDTH}], got {images.shape}")
    t = np.dtype(dtype).type
    return (images.astype(t) / t(127.5) - t(1.0))[:, None, :, :]


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = windows.shape[:4]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * k * k)
    return cols, ho, wo


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, stride: int):
    out_c, in_c, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, stride)
    out = cols @ weight.reshape(out_c, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(x.shape[0], ho, wo, out_c).transpose(0, 3, 1, 2)
    return out, cols


def _conv2d_input_grad(
    dout_mat: np.ndarray,
    shape: tuple[int, int, int],
    weight: np.ndarray,
    stride: int,
    in_hw: tuple[int, int],
) -> np.ndarray:
    """Gradient w.r.t. the conv input via col2im: one matrix product back to
    column space, then k*k strided scatter-adds into the input layout.
    `dout_mat` is the upstream gradient flattened to (B*ho*wo, out_c)."""
    b, ho, wo = shape
    out_c, in_c, k, _ = weight.shape
    dcols = (dout_mat @ weight.reshape(out_c, -1)).reshape(b, ho, wo, in_c, k, k)
    dx = np.zeros((b, in_c) + in_hw, dtype=dout_mat.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dx


class Network:
    """Parameter container plus forward/backward passes.

    `dtype` selects the compute precision: float32 for training throughput,
    float64 for finite-difference probes.
    """

    def __init__(self, params: list[np.ndarray], dtype=np.float32):
        shapes = parameter_shapes()
        if len(params) != len(shapes):
            raise ShapeMismatchError(f"expected {len(shapes)} tensors, got {len(params)}")
        for p, shape in zip(params, shapes):
            if p.shape != shape:
                raise ShapeMismatchError(f"tensor shape {p.shape} != expected {shape}")
        shape_chain()
        self.dtype = np.dtype(dtype)
        self.params = [np.asarray(p, dtype=self.dtype) for p in params]

    @staticmethod
    def xavier(rng: RngStream, dtype=np.float32) -> "Network":
        return Network(xavier_init(rng, dtype), dtype)

    def copy(self) -> "Network":
        return Network([p.copy() for p in self.params], self.dtype)

    def forward(self, x: np.ndarray, caches: list | None = None) -> np.ndarray:
        """Batched forward pass; x is normalized [B,1,H,W]. Returns [B]."""
        if x.ndim != 4 or x.shape[1:] != (1, INPUT_HEIGHT, INPUT_WIDTH):
            raise ShapeMismatchError(f"bad input shape {x.shape}")
        x = np.asarray(x, dtype=self.dtype)
        idx = 0
        for in_c, out_c, k, s in CONV_LAYERS:
            w, b = self.params[idx], self.params[idx + 1]
            out, cols = _conv2d(x, w, b, s)
            mask = out > 0
            if caches is not None:
                caches.append((x.shape, cols, mask))
            x = out * mask
            idx += 2
        h = x.reshape(x.shape[0], -1)
        n_fc = len(FC_LAYERS)
        for layer, (fan_in, fan_out) in enumerate(FC_LAYERS):
            w, b = self.params[idx], self.params[idx + 1]
            out = h @ w.T + b
            last = layer == n_fc - 1
            mask = None if last else out > 0
            if caches is not None:
                caches.append((h, mask))
            h = out if last else out * mask
            idx += 2
        return h[:, 0]

    def predict(self, images: np.ndarray, batch: int = 256) -> np.ndarray:
        """Steering predictions (normalized) for uint8 images [N,H,W]."""
        outs = []
        for start in range(0, len(images), batch):
            x = normalize_images(images[start : start + batch], self.dtype)
            outs.append(self.forward(x))
        return np.concatenate(outs)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray):
        """Mean-squared-error loss over the batch plus gradients per tensor."""
        labels = np.asarray(labels, dtype=self.dtype)
        if len(labels) == 0:
            raise ValueError("empty batch")
        caches: list = []
        pred = self.forward(x, caches)
        resid = pred.astype(np.float64) - labels.astype(np.float64)
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"loss diverged: {loss}")

        grads: list[np.ndarray | None] = [None] * len(self.params)
        b = x.shape[0]
        dh = (2.0 * resid / b).astype(self.dtype)[:, None]  # d loss / d output
        idx = len(self.params)
        for layer in reversed(range(len(FC_LAYERS))):
            idx -= 2
            w = self.params[idx]
            h_in, mask = caches[len(CONV_LAYERS) + layer]
            grads[idx] = dh.T @ h_in
            grads[idx + 1] = dh.sum(axis=0)
            dh = dh @ w
            if layer > 0:
                dh = dh * caches[len(CONV_LAYERS) + layer - 1][1]

        chain = shape_chain()
        c, h, w_ = chain[-1]
        dx = dh.reshape(b, c, h, w_)
        for layer in reversed(range(len(CONV_LAYERS))):
            idx -= 2
            in_c, out_c, k, s = CONV_LAYERS[layer]
            weight = self.params[idx]
            x_shape, cols, mask = caches[layer]
            dx = dx * mask
            b_, _, ho, wo = dx.shape
            dout_mat = np.ascontiguousarray(dx.transpose(0, 2, 3, 1)).reshape(-1, out_c)
            grads[idx] = (dout_mat.T @ cols).reshape(weight.shape)
            grads[idx + 1] = dx.sum(axis=(0, 2, 3))
            if layer > 0:
                dx = _conv2d_input_grad(dout_mat, (b_, ho, wo), weight, s, x_shape[2:])
        return loss, grads

    def sgd_step(self, grads: list[np.ndarray], learning_rate: float) -> None:
        for p, g in zip(self.params, grads):
            p -= self.dtype.type(learning_rate) * g.astype(self.dtype)


MAGIC = b"CFW1"


def save_checkpoint(path, network: Network) -> None:
    """Binary checkpoint: magic, architecture hash, dim header, float32 LE data."""
    blob = bytearray()
    blob += MAGIC
    blob += spec_hash()
    blob += struct.pack("<I", len(network.params))
    for p in network.params:
        blob += struct.pack("<B", p.ndim)
        blob += struct.pack(f"<{p.ndim}I", *p.shape)
    for p in network.params:
        blob += np.ascontiguousarray(p, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, dtype=np.float32) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    if blob[4:36] != spec_hash():
        raise SpecHashMismatchError(f"{path}: checkpoint was written for a different architecture")
    (n_tensors,) = struct.unpack_from("<I", blob, 36)
    offset = 40
    shapes = []
    for _ in range(n_tensors):
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        shapes.append(shape)
    params = []
    for shape in shapes:
        n = int(np.prod(shape))
        params.append(
            np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        )
        offset += 4 * n
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return Network(params, dtype)
