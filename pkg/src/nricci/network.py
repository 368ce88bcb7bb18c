"""Feed-forward ReLU classifiers with exact analytic gradients.

Two architectures are supported: plain dense stacks (784 -> hidden... -> 10)
and a small strided CNN (two valid-padding conv layers, then dense heads).
Hidden layers are ReLU, the output layer is linear, and the loss is mean
softmax cross-entropy. Everything is float64 and fully batched.

Convolutions run through im2col with gather indices precomputed at layer
construction, and the backward pass scatters through a padded inverse
index table instead of add.at, which keeps training throughput reasonable
in plain numpy. The same index tables double as the sparse unrolled view
(:meth:`ConvLayer.linearization`) that graph construction consumes, so the
graph and the forward pass can never disagree about connectivity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

INPUT_SIDE = 28
INPUT_DIM = INPUT_SIDE * INPUT_SIDE
N_CLASSES = 10

_RELU_SLOPE_AT_ZERO = 0.0  # subgradient choice: ReLU'(0) == 0


@dataclass
class LayerLinearization:
    """One layer viewed as a sparse affine map, CSR by output neuron.

    Row ``o`` owns entries ``indptr[o]:indptr[o+1]`` of ``cols``/``weights``;
    ``cols`` are flat input indices, ``bias`` has one entry per output.
    Dense layers produce full rows; conv layers only the receptive field.
    """

    indptr: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    in_dim: int
    out_dim: int


@dataclass
class ActivationTrace:
    """Per-layer activations of one example: values[0] is the input, values[k]
    the post-activation output of layer k (logits for the last layer)."""

    values: List[np.ndarray]


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, activation: str):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = np.zeros((out_dim, in_dim))
        self.bias = np.zeros(out_dim)

    def init_params(self, rng: np.random.Generator) -> None:
        bound = np.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.weight = rng.uniform(-bound, bound, size=(self.out_dim, self.in_dim))
        self.bias = np.zeros(self.out_dim)

    def forward(self, x: np.ndarray):
        z = x @ self.weight.T + self.bias
        cache = x
        return z, cache

    def backward(self, grad_z: np.ndarray, cache):
        x = cache
        grad_w = grad_z.T @ x
        grad_b = grad_z.sum(axis=0)
        grad_x = grad_z @ self.weight
        return grad_x, [grad_w, grad_b]

    def params(self):
        return [self.weight, self.bias]

    def set_params(self, arrays):
        w, b = arrays
        if w.shape != self.weight.shape or b.shape != self.bias.shape:
            raise ValueError(
                f"dense layer expects {self.weight.shape}/{self.bias.shape}, "
                f"got {w.shape}/{b.shape}"
            )
        self.weight = w.copy()
        self.bias = b.copy()

    def linearization(self) -> LayerLinearization:
        o, i = self.out_dim, self.in_dim
        indptr = np.arange(o + 1, dtype=np.int64) * i
        cols = np.tile(np.arange(i, dtype=np.int64), o)
        return LayerLinearization(
            indptr=indptr,
            cols=cols,
            weights=self.weight.ravel().copy(),
            bias=self.bias.copy(),
            in_dim=i,
            out_dim=o,
        )


class ConvLayer:
    """Valid-padding strided convolution over channel-major flat inputs.

    The input vector is (c_in * height * width,) with channel-major order;
    the output is (c_out * out_h * out_w,) in the same convention.
    """

    def __init__(self, c_in, height, width, c_out, kernel, stride, activation):
        self.c_in = c_in
        self.height = height
        self.width = width
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.activation = activation
        self.out_h = (height - kernel) // stride + 1
        self.out_w = (width - kernel) // stride + 1
        if self.out_h <= 0 or self.out_w <= 0:
            raise ValueError("kernel larger than input")
        self.n_patch = self.out_h * self.out_w
        self.patch_len = c_in * kernel * kernel
        self.in_dim = c_in * height * width
        self.out_dim = c_out * self.n_patch
        self.weight = np.zeros((c_out, c_in, kernel, kernel))
        self.bias = np.zeros(c_out)
        self._cols_idx = self._build_cols_idx()
        self._inv_idx = self._build_inv_idx()

    def _build_cols_idx(self) -> np.ndarray:
        """(n_patch, patch_len) flat input indices for each output position."""
        k, s = self.kernel, self.stride
        idx = np.empty((self.n_patch, self.patch_len), dtype=np.int64)
        p = 0
        for oy in range(self.out_h):
            for ox in range(self.out_w):
                j = 0
                for ci in range(self.c_in):
                    for ky in range(k):
                        for kx in range(k):
                            y = oy * s + ky
                            x = ox * s + kx
                            idx[p, j] = ci * self.height * self.width + y * self.width + x
                            j += 1
                p += 1
        return idx

    def _build_inv_idx(self) -> np.ndarray:
        """(in_dim, max_cover) indices into the flattened patch-gradient
        array, padded with a trash slot so col2im is a plain gather-sum."""
        cover: List[List[int]] = [[] for _ in range(self.in_dim)]
        flat = self._cols_idx  # (n_patch, patch_len)
        for p in range(self.n_patch):
            for j in range(self.patch_len):
                cover[flat[p, j]].append(p * self.patch_len + j)
        max_cover = max((len(c) for c in cover), default=0)
        pad_slot = self.n_patch * self.patch_len  # points at an appended zero
        inv = np.full((self.in_dim, max_cover), pad_slot, dtype=np.int64)
        for i, slots in enumerate(cover):
            inv[i, : len(slots)] = slots
        return inv

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.c_in * self.kernel * self.kernel
        fan_out = self.c_out * self.kernel * self.kernel
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(
            -bound, bound, size=(self.c_out, self.c_in, self.kernel, self.kernel)
        )
        self.bias = np.zeros(self.c_out)

    def forward(self, x: np.ndarray):
        patches = x[:, self._cols_idx]  # (B, n_patch, patch_len)
        wmat = self.weight.reshape(self.c_out, self.patch_len)
        out = np.einsum("bpk,ck->bcp", patches, wmat, optimize=True)
        out += self.bias[None, :, None]
        z = out.reshape(x.shape[0], self.out_dim)
        cache = patches
        return z, cache

    def backward(self, grad_z: np.ndarray, cache):
        patches = cache
        batch = grad_z.shape[0]
        wmat = self.weight.reshape(self.c_out, self.patch_len)
        g = grad_z.reshape(batch, self.c_out, self.n_patch)
        grad_w = np.einsum("bcp,bpk->ck", g, patches, optimize=True)
        grad_b = g.sum(axis=(0, 2))
        grad_patches = np.einsum("bcp,ck->bpk", g, wmat, optimize=True)
        flat = grad_patches.reshape(batch, self.n_patch * self.patch_len)
        padded = np.concatenate([flat, np.zeros((batch, 1))], axis=1)
        grad_x = padded[:, self._inv_idx].sum(axis=2)
        return grad_x, [grad_w.reshape(self.weight.shape), grad_b]

    def params(self):
        return [self.weight, self.bias]

    def set_params(self, arrays):
        w, b = arrays
        if w.shape != self.weight.shape or b.shape != self.bias.shape:
            raise ValueError(
                f"conv layer expects {self.weight.shape}/{self.bias.shape}, "
                f"got {w.shape}/{b.shape}"
            )
        self.weight = w.copy()
        self.bias = b.copy()

    def linearization(self) -> LayerLinearization:
        """Unroll the convolution to its sparse affine form. Output o = co *
        n_patch + p receives exactly the receptive field of patch p, weighted
        by filter co; its bias is the filter bias."""
        wmat = self.weight.reshape(self.c_out, self.patch_len)
        rows_per_out = self.patch_len
        indptr = np.arange(self.out_dim + 1, dtype=np.int64) * rows_per_out
        cols = np.empty(self.out_dim * rows_per_out, dtype=np.int64)
        weights = np.empty(self.out_dim * rows_per_out)
        bias = np.empty(self.out_dim)
        for co in range(self.c_out):
            for p in range(self.n_patch):
                o = co * self.n_patch + p
                lo = o * rows_per_out
                cols[lo : lo + rows_per_out] = self._cols_idx[p]
                weights[lo : lo + rows_per_out] = wmat[co]
                bias[o] = self.bias[co]
        return LayerLinearization(
            indptr=indptr,
            cols=cols,
            weights=weights,
            bias=bias,
            in_dim=self.in_dim,
            out_dim=self.out_dim,
        )


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad_mask(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        mask = (z > 0.0).astype(np.float64)
        if _RELU_SLOPE_AT_ZERO != 0.0:
            mask = mask + _RELU_SLOPE_AT_ZERO * (z == 0.0)
        return mask
    return np.ones_like(z)


class Network:
    """A stack of layers ending in linear logits.

    ``meta`` carries training context (regime, seed, hyperparameters)
    and travels with the model file; it never affects computation.
    """

    def __init__(self, layers: Sequence, description: dict, meta: Optional[dict] = None):
        self.layers = list(layers)
        self._description = dict(description)
        self.meta = dict(meta) if meta else {}

    # -- structure ---------------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def arch_description(self) -> dict:
        return dict(self._description)

    def layer_sizes(self) -> List[int]:
        """Node counts per rank: input, each layer's output."""
        sizes = [self.layers[0].in_dim]
        sizes.extend(layer.out_dim for layer in self.layers)
        return sizes

    def parameter_arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def parameter_kinds(self) -> List[str]:
        kinds: List[str] = []
        for _ in self.layers:
            kinds.extend(["weight", "bias"])
        return kinds

    def set_parameter_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        if len(arrays) != 2 * len(self.layers):
            raise ValueError(
                f"expected {2 * len(self.layers)} parameter arrays, got {len(arrays)}"
            )
        for k, layer in enumerate(self.layers):
            layer.set_params(arrays[2 * k : 2 * k + 2])

    def linearizations(self) -> List[LayerLinearization]:
        return [layer.linearization() for layer in self.layers]

    # -- forward -----------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched logits for inputs of shape (batch, in_dim)."""
        h = x
        for layer in self.layers:
            z, _ = layer.forward(h)
            h = _apply_activation(z, layer.activation)
        return h

    def forward_trace(self, x: np.ndarray) -> ActivationTrace:
        """Forward pass for a single example (in_dim,), recording every
        post-activation vector."""
        in_dim = self.layer_sizes()[0]
        if x.size != in_dim:
            raise ValueError(f"expected one example of size {in_dim}, got {x.shape}")
        h = x.reshape(1, -1)
        values = [x.astype(np.float64).copy()]
        for layer in self.layers:
            z, _ = layer.forward(h)
            h = _apply_activation(z, layer.activation)
            values.append(h[0].copy())
        return ActivationTrace(values=values)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Predicted labels; ties go to the lowest class index."""
        return np.argmax(self.forward(x), axis=1)

    # -- loss and gradients ------------------------------------------------

    def _forward_full(self, x: np.ndarray):
        caches = []
        pre = []
        h = x
        for layer in self.layers:
            z, cache = layer.forward(h)
            caches.append(cache)
            pre.append(z)
            h = _apply_activation(z, layer.activation)
        return h, pre, caches

    @staticmethod
    def _softmax_ce(logits: np.ndarray, labels: np.ndarray):
        """Mean cross-entropy and d(loss)/d(logits), numerically stable."""
        batch = logits.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(total)
        loss = -log_probs[np.arange(batch), labels].mean()
        grad = exp / total
        grad[np.arange(batch), labels] -= 1.0
        grad /= batch
        return loss, grad

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        logits = self.forward(x)
        loss, _ = self._softmax_ce(logits, labels)
        return float(loss)

    def loss_and_input_gradient(self, x: np.ndarray, labels: np.ndarray):
        """Mean CE loss and its gradient with respect to the input batch."""
        logits, pre, caches = self._forward_full(x)
        loss, grad = self._softmax_ce(logits, labels)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            grad = grad * _activation_grad_mask(pre[k], layer.activation)
            grad, _ = layer.backward(grad, caches[k])
        return float(loss), grad

    def loss_and_parameter_gradients(self, x: np.ndarray, labels: np.ndarray):
        """Mean CE loss and gradients aligned with parameter_arrays()."""
        logits, pre, caches = self._forward_full(x)
        loss, grad = self._softmax_ce(logits, labels)
        param_grads: List[List[np.ndarray]] = [None] * len(self.layers)  # type: ignore
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            grad = grad * _activation_grad_mask(pre[k], layer.activation)
            grad, pg = layer.backward(grad, caches[k])
            param_grads[k] = pg
        flat: List[np.ndarray] = []
        for pg in param_grads:
            flat.extend(pg)
        return float(loss), flat


def unroll_conv(layer: ConvLayer) -> LayerLinearization:
    """Sparse affine view of a convolution: one (input, output, weight)
    incidence per receptive-field membership, shared kernel weights
    repeated per incidence, one bias entry per output node."""
    if not isinstance(layer, ConvLayer):
        raise TypeError("unroll_conv expects a ConvLayer")
    return layer.linearization()


def apply_linearization(lin: LayerLinearization, x: np.ndarray) -> np.ndarray:
    """Evaluate a sparse affine map on a flat input (pre-activation)."""
    if x.shape != (lin.in_dim,):
        raise ValueError(f"input shape {x.shape} != ({lin.in_dim},)")
    z = np.empty(lin.out_dim)
    for o in range(lin.out_dim):
        lo, hi = lin.indptr[o], lin.indptr[o + 1]
        z[o] = lin.weights[lo:hi] @ x[lin.cols[lo:hi]] + lin.bias[o]
    return z


# ---------------------------------------------------------------------------
# construction


def _dense_stack(dims: List[int]) -> List[DenseLayer]:
    layers = []
    for k in range(len(dims) - 1):
        act = "linear" if k == len(dims) - 2 else "relu"
        layers.append(DenseLayer(dims[k], dims[k + 1], act))
    return layers


def _cnn_layers() -> List:
    conv1 = ConvLayer(1, INPUT_SIDE, INPUT_SIDE, 6, 6, 2, "relu")
    conv2 = ConvLayer(6, conv1.out_h, conv1.out_w, 16, 6, 2, "relu")
    flat = conv2.out_dim
    return [
        conv1,
        conv2,
        DenseLayer(flat, 120, "relu"),
        DenseLayer(120, 84, "relu"),
        DenseLayer(84, N_CLASSES, "linear"),
    ]


def parse_arch(arch: str):
    """Normalize an architecture string: "cnn", or comma-separated hidden
    sizes like "15,20"."""
    text = arch.strip().lower()
    if text == "cnn":
        return {"kind": "cnn"}
    try:
        hidden = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"bad architecture {arch!r}: want 'cnn' or e.g. '15,20'")
    if not hidden or any(h <= 0 for h in hidden):
        raise ValueError(f"bad architecture {arch!r}: hidden sizes must be positive")
    return {"kind": "dense", "hidden": hidden}


def network_from_description(desc: dict) -> Network:
    if desc["kind"] == "cnn":
        return Network(_cnn_layers(), desc)
    if desc["kind"] == "dense":
        dims = [INPUT_DIM] + list(desc["hidden"]) + [N_CLASSES]
        return Network(_dense_stack(dims), desc)
    raise ValueError(f"unknown network kind {desc['kind']!r}")


def build_network(arch: str, seed: int) -> Network:
    """Build and initialize a network.

    Weights are uniform on +-sqrt(6 / (fan_in + fan_out)), biases zero;
    each layer draws from its own stream spawned off ``seed`` so layer
    initializations do not shift when earlier layers change shape.
    """
    net = network_from_description(parse_arch(arch))
    streams = np.random.SeedSequence(seed).spawn(len(net.layers))
    for layer, ss in zip(net.layers, streams):
        layer.init_params(np.random.default_rng(ss))
    return net
