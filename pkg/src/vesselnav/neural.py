"""Dense/conv networks with hand-written forward and backward passes.

Everything is plain numpy. A Network is an ordered stack of layer specs plus a
flat list of parameter arrays; forward() is pure, forward_cached() additionally
returns the activations needed by backward(). Networks with a Concat layer take
a second flat input (the critic concatenates the action vector into the feature
vector before its dense head) and backward() returns the gradient with respect
to that auxiliary input, which is what drives the actor update.

Weights initialize uniform in +-1/sqrt(fan_in); biases start at zero.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

RELU = "relu"
TANH = "tanh"
LINEAR = "linear"
_ACTIVATIONS = (RELU, TANH, LINEAR)


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int
    stride: int
    activation: str = RELU


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = LINEAR
    scale: float = 1.0  # output multiplier, applied after the activation


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Concat:
    """Splice the auxiliary input vector onto the flat feature vector."""


Layer = Union[Conv, Dense, Flatten, Concat]


class CheckpointMismatchError(RuntimeError):
    """Checkpoint does not match the requested network architecture."""


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == TANH:
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    """d activation / d preactivation, using whichever of z/a is cheaper."""
    if kind == RELU:
        return (z > 0.0).astype(z.dtype)
    if kind == TANH:
        return 1.0 - a * a
    return np.ones_like(z)


class Network:
    def __init__(self, input_shape: Sequence[int], layers: Sequence[Layer],
                 aux_size: int = 0, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.aux_size = int(aux_size)
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)
        if self.aux_size > 0 and not any(isinstance(l, Concat) for l in self.layers):
            raise ValueError("aux input declared but no Concat layer present")
        if sum(isinstance(l, Concat) for l in self.layers) > 1:
            raise ValueError("at most one Concat layer is supported")

        self.params: List[np.ndarray] = []   # W0, b0, W1, b1, ... in layer order
        self._shapes: List[Tuple[int, ...]] = [self.input_shape]
        shape = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"Conv needs (H, W, C) input, got {shape}")
                h, w, c = shape
                if layer.activation not in _ACTIVATIONS:
                    raise ValueError(f"unknown activation {layer.activation!r}")
                k, s = layer.kernel, layer.stride
                oh = (h - k) // s + 1
                ow = (w - k) // s + 1
                if oh < 1 or ow < 1:
                    raise ValueError("conv kernel larger than its input")
                fan_in = k * k * c
                limit = 1.0 / np.sqrt(fan_in)
                self.params.append(rng.uniform(-limit, limit,
                                               (k, k, c, layer.filters)).astype(self.dtype))
                self.params.append(np.zeros(layer.filters, dtype=self.dtype))
                shape = (oh, ow, layer.filters)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ValueError(f"Dense needs flat input, got {shape}")
                if layer.activation not in _ACTIVATIONS:
                    raise ValueError(f"unknown activation {layer.activation!r}")
                fan_in = shape[0]
                limit = 1.0 / np.sqrt(fan_in)
                self.params.append(rng.uniform(-limit, limit,
                                               (fan_in, layer.units)).astype(self.dtype))
                self.params.append(np.zeros(layer.units, dtype=self.dtype))
                shape = (layer.units,)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Concat):
                if len(shape) != 1:
                    raise ValueError("Concat needs flat features; add Flatten first")
                if self.aux_size <= 0:
                    raise ValueError("Concat layer needs aux_size > 0")
                shape = (shape[0] + self.aux_size,)
            else:
                raise TypeError(f"unknown layer {layer!r}")
            self._shapes.append(shape)
        self.output_shape = shape

    # -- identity ------------------------------------------------------------

    def spec_string(self) -> str:
        parts = [f"in={'x'.join(map(str, self.input_shape))}", f"aux={self.aux_size}"]
        for layer in self.layers:
            if isinstance(layer, Conv):
                parts.append(f"conv({layer.filters},{layer.kernel},{layer.stride},"
                             f"{layer.activation})")
            elif isinstance(layer, Dense):
                parts.append(f"dense({layer.units},{layer.activation},{layer.scale!r})")
            elif isinstance(layer, Flatten):
                parts.append("flatten")
            else:
                parts.append("concat")
        return "|".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.spec_string().encode("ascii")).hexdigest()

    # -- forward / backward ----------------------------------------------------

    def forward(self, x: np.ndarray, aux: Optional[np.ndarray] = None) -> np.ndarray:
        out, _ = self._run(x, aux, keep_cache=False)
        return out

    def forward_cached(self, x: np.ndarray, aux: Optional[np.ndarray] = None):
        return self._run(x, aux, keep_cache=True)

    def _run(self, x: np.ndarray, aux: Optional[np.ndarray], keep_cache: bool):
        x = np.asarray(x, dtype=self.dtype)
        single = x.shape == self.input_shape
        if single:
            x = x[None, ...]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != {self.input_shape}")
        if self.aux_size > 0:
            if aux is None:
                raise ValueError("network expects an aux input")
            aux = np.asarray(aux, dtype=self.dtype)
            if single and aux.shape == (self.aux_size,):
                aux = aux[None, :]
            if aux.shape != (x.shape[0], self.aux_size):
                raise ValueError(f"aux shape {aux.shape} != "
                                 f"({x.shape[0]}, {self.aux_size})")
        elif aux is not None:
            raise ValueError("network takes no aux input")

        cache: List[Tuple] = []
        h = self._forward_span(x, aux, 0, len(self.layers), keep_cache, cache, 0)
        if single:
            return h[0], (cache, True)
        return h, (cache, False)

    def _forward_span(self, h: np.ndarray, aux: Optional[np.ndarray],
                      start: int, stop: int, keep_cache: bool,
                      cache: List, p: int) -> np.ndarray:
        for layer in self.layers[start:stop]:
            if isinstance(layer, Conv):
                w, b = self.params[p], self.params[p + 1]
                p += 2
                h, c = _conv_forward(h, w, b, layer.stride, layer.activation)
                cache.append(c if keep_cache else None)
            elif isinstance(layer, Dense):
                w, b = self.params[p], self.params[p + 1]
                p += 2
                z = h @ w + b
                a = _act(z, layer.activation)
                out = a * layer.scale if layer.scale != 1.0 else a
                cache.append((h, z, a) if keep_cache else None)
                h = out
            elif isinstance(layer, Flatten):
                cache.append(h.shape if keep_cache else None)
                h = h.reshape(h.shape[0], -1)
            else:  # Concat
                cache.append(h.shape[1] if keep_cache else None)
                h = np.concatenate([h, aux], axis=1)
        return h

    def forward_trunk(self, x: np.ndarray):
        """Features and caches for the layers below the concat (batch input).

        One trunk pass can then serve several head passes with different
        aux inputs via forward_head_cached.
        """
        ci = self._concat_index()
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != {self.input_shape}")
        cache: List[Tuple] = []
        feat = self._forward_span(x, None, 0, ci, True, cache, 0)
        return feat, cache

    def forward_head_cached(self, feat: np.ndarray, aux: np.ndarray,
                            trunk_cache: List):
        """Finish a forward pass from precomputed trunk features."""
        ci = self._concat_index()
        aux = np.asarray(aux, dtype=self.dtype)
        if aux.shape != (feat.shape[0], self.aux_size):
            raise ValueError(f"aux shape {aux.shape} != "
                             f"({feat.shape[0]}, {self.aux_size})")
        p = sum(2 for layer in self.layers[:ci]
                if isinstance(layer, (Conv, Dense)))
        cache = list(trunk_cache)
        out = self._forward_span(feat, aux, ci, len(self.layers), True, cache, p)
        return out, (cache, False)

    def _concat_index(self) -> int:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Concat):
                return i
        raise ValueError("network has no concat layer")

    def backward(self, cache, dout: np.ndarray):
        """Gradients for params (same order as self.params) and the aux input."""
        layer_caches, single = cache
        dout = np.asarray(dout, dtype=self.dtype)
        if single:
            dout = dout[None, ...]
        grads: List[Optional[np.ndarray]] = [None] * len(self.params)
        daux: Optional[np.ndarray] = None
        d = dout
        p = len(self.params)
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            c = layer_caches[idx]
            if isinstance(layer, Conv):
                p -= 2
                d, dw, db = _conv_backward(d, self.params[p], c, layer.stride,
                                           layer.activation, need_dx=idx > 0)
                grads[p], grads[p + 1] = dw, db
            elif isinstance(layer, Dense):
                p -= 2
                h, z, a = c
                if layer.scale != 1.0:
                    d = d * layer.scale
                dz = d * _act_grad(z, a, layer.activation)
                grads[p] = h.T @ dz
                grads[p + 1] = dz.sum(axis=0)
                d = dz @ self.params[p].T
            elif isinstance(layer, Flatten):
                d = d.reshape(c)
            else:  # Concat
                feat = c
                daux = d[:, feat:]
                d = d[:, :feat]
        if single and daux is not None:
            daux = daux[0]
        return grads, daux

    def backward_aux(self, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient of the output w.r.t. the aux input only.

        Walks back just to the concat layer, skipping parameter gradients
        and the layers below it entirely.
        """
        layer_caches, single = cache
        dout = np.asarray(dout, dtype=self.dtype)
        if single:
            dout = dout[None, ...]
        d = dout
        p = len(self.params)
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            c = layer_caches[idx]
            if isinstance(layer, Dense):
                p -= 2
                _, z, a = c
                if layer.scale != 1.0:
                    d = d * layer.scale
                dz = d * _act_grad(z, a, layer.activation)
                d = dz @ self.params[p].T
            elif isinstance(layer, Concat):
                daux = d[:, c:]
                return daux[0] if single else daux
            elif isinstance(layer, Flatten):
                d = d.reshape(c)
            else:
                raise ValueError("no concat layer above a conv layer")
        raise ValueError("network has no concat layer")

    # -- parameter plumbing ------------------------------------------------

    def copy_params(self) -> List[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.params):
            raise ValueError("parameter count mismatch")
        for mine, theirs in zip(self.params, params):
            if mine.shape != theirs.shape:
                raise ValueError("parameter shape mismatch")
            mine[...] = theirs.astype(self.dtype)

    def clone(self) -> "Network":
        twin = Network(self.input_shape, self.layers, self.aux_size,
                       rng=np.random.default_rng(0), dtype=self.dtype)
        twin.set_params(self.params)
        return twin


def hard_copy(src: Network, dst: Network) -> None:
    """Overwrite dst's parameters with src's (target-network sync)."""
    if src.spec_string() != dst.spec_string():
        raise ValueError("cannot hard-copy between different architectures")
    dst.set_params(src.params)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int,
                  activation: str):
    bsz, h, wd, c = x.shape
    k = w.shape[0]
    f = w.shape[3]
    oh = (h - k) // stride + 1
    ow = (wd - k) // stride + 1
    cols = np.empty((bsz, oh, ow, k, k, c), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, :, ki, kj, :] = x[:, ki:ki + stride * oh:stride,
                                         kj:kj + stride * ow:stride, :]
    flat = cols.reshape(bsz * oh * ow, k * k * c)
    z = flat @ w.reshape(k * k * c, f) + b
    a = _act(z, activation)
    out = a.reshape(bsz, oh, ow, f)
    return out, (x.shape, flat, z, a)


def _conv_backward(dout: np.ndarray, w: np.ndarray, cache, stride: int,
                   activation: str, need_dx: bool = True):
    x_shape, flat, z, a = cache
    bsz, h, wd, c = x_shape
    k = w.shape[0]
    f = w.shape[3]
    oh = dout.shape[1]
    ow = dout.shape[2]
    dflat_out = dout.reshape(bsz * oh * ow, f)
    dz = dflat_out * _act_grad(z, a, activation)
    dw = (flat.T @ dz).reshape(k, k, c, f)
    db = dz.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dz @ w.reshape(k * k * c, f).T).reshape(bsz, oh, ow, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for ki in range(k):
        for kj in range(k):
            dx[:, ki:ki + stride * oh:stride,
               kj:kj + stride * ow:stride, :] += dcols[:, :, :, ki, kj, :]
    return dx, dw, db


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None
        self._num: Optional[List[np.ndarray]] = None
        self._den: Optional[List[np.ndarray]] = None

    def step(self, params: Sequence[np.ndarray],
             grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        for g in grads:
            # a single reduction: any nan/inf contaminates the sum
            if not np.isfinite(np.sum(g)):
                raise ValueError("non-finite gradient")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
            self._num = [np.empty_like(p) for p in params]
            self._den = [np.empty_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v, num, den in zip(params, grads, self._m, self._v,
                                        self._num, self._den):
            m *= b1
            np.multiply(g, 1.0 - b1, out=num)
            m += num
            v *= b2
            np.multiply(g, g, out=num)
            num *= 1.0 - b2
            v += num
            np.divide(m, bc1, out=num)
            num *= self.lr
            np.divide(v, bc2, out=den)
            np.sqrt(den, out=den)
            den += self.eps
            num /= den
            p -= num
            if not np.isfinite(np.sum(p)):
                raise ValueError("parameters became non-finite")


# -- default architectures --------------------------------------------------

def view_trunk() -> List[Layer]:
    return [Conv(8, 3, 2, RELU), Conv(16, 3, 2, RELU), Flatten(), Dense(128, RELU)]


def q_network(view_cells: int = 51, channels: int = 4, n_actions: int = 8,
              rng: Optional[np.random.Generator] = None,
              dtype=np.float64) -> Network:
    layers = view_trunk() + [Dense(n_actions, LINEAR)]
    return Network((view_cells, view_cells, channels), layers, rng=rng, dtype=dtype)


def actor_network(view_cells: int = 51, channels: int = 4,
                  max_velocity: float = 0.001,
                  rng: Optional[np.random.Generator] = None,
                  dtype=np.float64) -> Network:
    layers = view_trunk() + [Dense(2, TANH, scale=max_velocity)]
    return Network((view_cells, view_cells, channels), layers, rng=rng, dtype=dtype)


def critic_network(view_cells: int = 51, channels: int = 4,
                   rng: Optional[np.random.Generator] = None,
                   dtype=np.float64) -> Network:
    layers = [Conv(8, 3, 2, RELU), Conv(16, 3, 2, RELU), Flatten(), Concat(),
              Dense(128, RELU), Dense(1, LINEAR)]
    return Network((view_cells, view_cells, channels), layers, aux_size=2,
                   rng=rng, dtype=dtype)


def toy_q_network(rng: Optional[np.random.Generator] = None,
                  dtype=np.float64) -> Network:
    layers = [Flatten(), Dense(128, RELU), Dense(64, RELU), Dense(4, LINEAR)]
    return Network((10, 10, 3), layers, rng=rng, dtype=dtype)


# -- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = b"VNCKPT01"
_DTYPE_CODES = {"<f4": 1, "<f8": 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_checkpoint(path, networks: Dict[str, Network],
                    meta: Optional[Dict[str, str]] = None) -> None:
    """Write named networks (and string metadata) as one versioned binary blob."""
    meta = meta or {}
    chunks: List[bytes] = [struct.pack("<H", len(meta))]
    for key in sorted(meta):
        kb, vb = key.encode("utf-8"), meta[key].encode("utf-8")
        chunks.append(struct.pack("<H", len(kb)) + kb)
        chunks.append(struct.pack("<H", len(vb)) + vb)
    chunks.append(struct.pack("<H", len(networks)))
    for name, net in networks.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(net.digest().encode("ascii"))
        chunks.append(struct.pack("<H", len(net.params)))
        for arr in net.params:
            arr = np.ascontiguousarray(arr)
            code = _DTYPE_CODES[arr.dtype.newbyteorder("<").str]
            chunks.append(struct.pack("<BB", code, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint -> (meta dict, {name: (digest, [arrays])})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointMismatchError(f"{path} is not a checkpoint file")
        (crc,) = struct.unpack("<I", fh.read(4))
        payload = fh.read()
    if zlib.crc32(payload) != crc:
        raise CheckpointMismatchError(f"{path} is corrupted")
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        piece = payload[off:off + n]
        if len(piece) != n:
            raise CheckpointMismatchError(f"{path} is truncated")
        off += n
        return piece

    (n_meta,) = struct.unpack("<H", take(2))
    meta = {}
    for _ in range(n_meta):
        (klen,) = struct.unpack("<H", take(2))
        key = take(klen).decode("utf-8")
        (vlen,) = struct.unpack("<H", take(2))
        meta[key] = take(vlen).decode("utf-8")
    (n_nets,) = struct.unpack("<H", take(2))
    nets = {}
    for _ in range(n_nets):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        digest = take(64).decode("ascii")
        (n_arrays,) = struct.unpack("<H", take(2))
        arrays = []
        for _ in range(n_arrays):
            code, ndim = struct.unpack("<BB", take(2))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise CheckpointMismatchError(f"{path}: unknown dtype code {code}")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(take(count * dtype.itemsize), dtype=dtype)
            arrays.append(arr.reshape(shape).copy())
        nets[name] = (digest, arrays)
    return meta, nets


def restore_network(net: Network, digest: str, arrays: List[np.ndarray]) -> None:
    """Load checkpoint arrays into a network, verifying the architecture."""
    if digest != net.digest():
        raise CheckpointMismatchError(
            "checkpoint was written for a different architecture")
    try:
        net.set_params(arrays)
    except ValueError as exc:
        raise CheckpointMismatchError(str(exc)) from exc
