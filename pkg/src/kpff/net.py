"""Minimal from-scratch training stack: conv/dense/pool/dropout layers,
softmax cross-entropy, SGD and Adam, and a small CNN whose per-block
feature vectors feed a configurable fusion stage (none/add/concat/kpff).

Layers run batched on [N, C, H, W] float64 arrays internally; the
single-sample ops (conv_forward, global_average_pool, ...) wrap the same
code with N=1 and take/return Tensor values.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, ShapeError, NonFiniteError, from_array
from .rng import stream
from .hooks import injected_bug

# ---------------------------------------------------------------------------
# activations


def _act_forward(name, pre):
    if name == "identity":
        return pre
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    if name == "leaky_relu":
        return np.where(pre > 0.0, pre, 0.01 * pre)
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name, pre, out, dout):
    if name == "identity":
        return dout
    if name == "relu":
        return dout * (pre > 0.0)
    if name == "sigmoid":
        return dout * out * (1.0 - out)
    if name == "leaky_relu":
        return dout * np.where(pre > 0.0, 1.0, 0.01)
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# layers


class ConvLayer:
    """Valid-region convolution with odd kernel extents, then activation.

    kernels: [out_channels, in_channels, 2*delta+1, 2*gamma+1]
    """

    def __init__(self, kernels, bias, activation="relu"):
        kernels = np.asarray(kernels, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if kernels.ndim != 4:
            raise ShapeError(f"kernels must be rank-4, got shape {kernels.shape}")
        if kernels.shape[2] % 2 == 0 or kernels.shape[3] % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {kernels.shape[2:]}")
        if bias.shape != (kernels.shape[0],):
            raise ShapeError(f"bias length {bias.shape} != out_channels {kernels.shape[0]}")
        self.kernels = kernels
        self.bias = bias
        self.activation = activation
        self._cache = None
        self.grads = {}

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    def forward_batch(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected [N,{self.in_channels},H,W], got {x.shape}")
        kh, kw = self.kernels.shape[2:]
        if x.shape[2] < kh or x.shape[3] < kw:
            raise ShapeError(f"input {x.shape[2:]} smaller than kernel {(kh, kw)}")
        cols = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [N,C,H',W',kh,kw]
        pre = np.einsum("nchwij,ocij->nohw", cols, self.kernels, optimize=True)
        pre += self.bias[None, :, None, None]
        out = _act_forward(self.activation, pre)
        self._cache = (x, cols, pre, out)
        return out

    def backward_batch(self, dout):
        x, cols, pre, out = self._cache
        kh, kw = self.kernels.shape[2:]
        dpre = _act_backward(self.activation, pre, out, dout)
        self.grads["kernels"] = np.einsum("nchwij,nohw->ocij", cols, dpre, optimize=True)
        self.grads["bias"] = dpre.sum(axis=(0, 2, 3))
        # dx: full correlation of dpre with kernels flipped in both spatial axes
        pad = np.pad(dpre, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        pcols = sliding_window_view(pad, (kh, kw), axis=(2, 3))  # [N,O,H,W,kh,kw]
        flipped = self.kernels[:, :, ::-1, ::-1]
        return np.einsum("nohwij,ocij->nchw", pcols, flipped, optimize=True)


class DenseLayer:
    """Affine map y = W x + b with an optional activation."""

    def __init__(self, weights, bias, activation="identity"):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeError(f"bad dense shapes: {weights.shape}, {bias.shape}")
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self._cache = None
        self.grads = {}

    def forward_batch(self, x):  # x: [N, in]
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"dense expects {self.weights.shape[1]} features, got {x.shape[1]}")
        pre = x @ self.weights.T + self.bias
        out = _act_forward(self.activation, pre)
        self._cache = (x, pre, out)
        return out

    def backward_batch(self, dout):
        x, pre, out = self._cache
        dpre = _act_backward(self.activation, pre, out, dout)
        self.grads["weights"] = dpre.T @ x
        self.grads["bias"] = dpre.sum(axis=0)
        return dpre @ self.weights


class MaxPool2x2:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
    Ties take the first window position (row-major), deterministically."""

    def __init__(self):
        self._cache = None

    def forward_batch(self, x):
        N, C, H, W = x.shape
        H2, W2 = H // 2, W // 2
        if H2 < 1 or W2 < 1:  # too small to pool: pass through
            self._cache = (x.shape, None)
            return x
        win = x[:, :, : H2 * 2, : W2 * 2].reshape(N, C, H2, 2, W2, 2)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, 4)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward_batch(self, dout):
        (N, C, H, W), idx = self._cache
        if idx is None:
            return dout
        H2, W2 = H // 2, W // 2
        dwin = np.zeros((N, C, H2, W2, 4))
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros((N, C, H, W))
        dx[:, :, : H2 * 2, : W2 * 2] = (
            dwin.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2 * 2, W2 * 2)
        )
        return dx


def gap_batch(x):  # [N,C,H,W] -> [N,C]
    return x.mean(axis=(2, 3))


def gap_backward_batch(dout, spatial_shape):
    H, W = spatial_shape
    return np.repeat(np.repeat(dout[:, :, None, None], H, axis=2), W, axis=3) / (H * W)


def dropout_batch(x, p, train, rng_stream):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
    Returns (output, mask) with mask already scaled."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    keep = (rng_stream.uniform(size=x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * keep, keep


def softmax_ce_batch(logits, labels):
    """Per-sample losses and dloss/dlogits (softmax - onehot), stabilized."""
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise IndexError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    probs = expo / expo.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    losses = -np.log(probs[np.arange(n), labels])
    grads = probs.copy()
    grads[np.arange(n), labels] -= 1.0
    return losses, grads


# ---------------------------------------------------------------------------
# single-sample ops over Tensor values


def conv_forward(layer: ConvLayer, image: Tensor) -> Tensor:
    if image.rank != 3:
        raise ShapeError(f"conv input must be rank-3 [C,H,W], got {image.shape}")
    out = layer.forward_batch(image.view()[None])
    return from_array(out[0])


def global_average_pool(image: Tensor) -> Tensor:
    if image.rank != 3:
        raise ShapeError(f"expected rank-3 [C,H,W], got {image.shape}")
    return from_array(gap_batch(image.view()[None])[0])


def softmax_cross_entropy(logits: Tensor, label: int):
    losses, grads = softmax_ce_batch(logits.data[None], [label])
    return float(losses[0]), from_array(grads[0])


def dropout(x: Tensor, p: float, mode: str, rng_stream) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out, _ = dropout_batch(x.data[None], p, mode == "train", rng_stream)
    return from_array(out[0])


# ---------------------------------------------------------------------------
# optimizers


class OptimizerState:
    """SGD or Adam with coupled weight decay (decay added to the gradient)."""

    def __init__(self, method="adam", lr=1e-4, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        if method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {method!r}")
        self.method = method
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.step_count = 0

    def apply(self, params, grads, frozen=()):
        """Update the parameter arrays in place. params/grads: name -> array."""
        self.step_count += 1
        t = self.step_count
        for name, theta in params.items():
            if name in frozen:
                continue
            g = grads[name]
            if g.shape != theta.shape:
                raise ShapeError(f"grad shape {g.shape} != param shape {theta.shape} for {name}")
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * theta
            if self.method == "sgd":
                theta -= self.lr * g
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            if injected_bug() == "adam-bias":
                m_hat, v_hat = self.m[name], self.v[name]
            else:
                m_hat = self.m[name] / (1 - self.beta1 ** t)
                v_hat = self.v[name] / (1 - self.beta2 ** t)
            theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_step(state: OptimizerState, params: Tensor, grads: Tensor) -> Tensor:
    """Single-tensor functional form of one optimizer update."""
    if params.shape != grads.shape:
        raise ShapeError(f"shape mismatch: {params.shape} vs {grads.shape}")
    buf = {"theta": params.data.copy()}
    state.apply(buf, {"theta": grads.data})
    return from_array(buf["theta"].reshape(params.shape))


# ---------------------------------------------------------------------------
# the toy model

FUSION_METHODS = ("none", "add", "concat", "kpff")


class Model:
    """Small CNN: per block (conv 3x3 valid + 2x2 maxpool), a global-average
    -pooled tap after each block, projections to a common width, the fusion
    stage, dropout, and a dense classifier head."""

    def __init__(self, seed, in_channels=1, image_size=16, channels=(6, 12),
                 activation="relu", fusion="kpff", num_classes=4,
                 dropout_p=0.5, kpff_noise=0.0):
        if fusion not in FUSION_METHODS:
            raise ValueError(f"fusion must be one of {FUSION_METHODS}, got {fusion!r}")
        self.fusion = fusion
        self.dropout_p = dropout_p
        self.activation = activation

        def init(name, shape, fan_in):
            s = stream(seed, "init/" + name)
            bound = 1.0 / np.sqrt(fan_in)
            return s.uniform(size=shape, low=-bound, high=bound)

        self.convs = []
        self.pools = []
        size = image_size
        prev = in_channels
        for b, ch in enumerate(channels):
            fan_in = prev * 9
            conv = ConvLayer(
                init(f"conv{b}.kernels", (ch, prev, 3, 3), fan_in),
                init(f"conv{b}.bias", (ch,), fan_in),
                activation,
            )
            self.convs.append(conv)
            self.pools.append(MaxPool2x2())
            size = size - 2
            if size < 1:
                raise ShapeError(f"image size {image_size} too small for {len(channels)} blocks")
            size = max(size // 2, 1)
            prev = ch

        n_taps = len(channels)
        self.r = min(channels)
        self.projections = []
        if fusion != "none":
            for b, ch in enumerate(channels):
                fan_in = ch
                self.projections.append(
                    DenseLayer(
                        init(f"proj{b}.weights", (self.r, ch), fan_in),
                        init(f"proj{b}.bias", (self.r,), fan_in),
                        "identity",
                    )
                )

        if fusion == "kpff":
            ws = np.eye(n_taps)
            if kpff_noise > 0.0:
                ws = ws + stream(seed, "init/fusion.ws").normal(
                    size=(n_taps, n_taps), sigma=kpff_noise
                )
            self.fusion_ws = ws  # row i is w_i
            self.grad_fusion_ws = np.zeros_like(ws)

        if fusion == "none":
            head_in = channels[-1]
        elif fusion == "add":
            head_in = self.r
        else:
            head_in = n_taps * self.r
        self.head = DenseLayer(
            init("head.weights", (num_classes, head_in), head_in),
            init("head.bias", (num_classes,), head_in),
            "identity",
        )
        self._cache = None

    # --- parameter registry ------------------------------------------------

    def params(self):
        out = {}
        for b, conv in enumerate(self.convs):
            out[f"conv{b}.kernels"] = conv.kernels
            out[f"conv{b}.bias"] = conv.bias
        for b, proj in enumerate(self.projections):
            out[f"proj{b}.weights"] = proj.weights
            out[f"proj{b}.bias"] = proj.bias
        if self.fusion == "kpff":
            out["fusion.ws"] = self.fusion_ws
        out["head.weights"] = self.head.weights
        out["head.bias"] = self.head.bias
        return out

    def fusion_param_names(self):
        return ("fusion.ws",) if self.fusion == "kpff" else ()

    # --- forward / backward -------------------------------------------------

    def _fuse(self, taps):
        if self.fusion == "none":
            return taps[-1]
        projected = [p.forward_batch(t) for p, t in zip(self.projections, taps)]
        self._proj_cache = projected
        n, r = len(projected), self.r
        if self.fusion == "add":
            acc = projected[0].copy()
            for p in projected[1:]:
                acc += p
            return acc
        if self.fusion == "concat":
            return np.concatenate(projected, axis=1)
        N = projected[0].shape[0]
        fused = np.zeros((N, n * r))
        for k in range(n):
            blk = fused[:, k * r:(k + 1) * r]
            for i in range(n):
                blk += self.fusion_ws[i, k] * projected[i]
        return fused

    def _fuse_backward(self, dfused):
        n, r = len(self.convs), self.r
        if self.fusion == "none":
            dtaps = [None] * (n - 1) + [dfused]
            return dtaps
        if self.fusion == "add":
            dprojected = [dfused for _ in range(n)]
        elif self.fusion == "concat":
            dprojected = [dfused[:, j * r:(j + 1) * r] for j in range(n)]
        else:
            projected = self._proj_cache
            for i in range(n):
                for b in range(n):
                    blk = (b + 1) % n if injected_bug() == "kpff-w" else b
                    self.grad_fusion_ws[i, b] += float(
                        np.sum(dfused[:, blk * r:(blk + 1) * r] * projected[i])
                    )
            dprojected = []
            for j in range(n):
                dp = np.zeros_like(projected[j])
                for k in range(n):
                    wjk = self.fusion_ws[j, k]
                    if injected_bug() == "kpff-x":
                        wjk = self.fusion_ws[k, j]
                    dp += dfused[:, k * r:(k + 1) * r] * wjk
                dprojected.append(dp)
        return [p.backward_batch(dp) for p, dp in zip(self.projections, dprojected)]

    def forward_batch(self, x, train=False, dropout_stream=None):
        taps = []
        spatial = []
        h = x
        for conv, pool in zip(self.convs, self.pools):
            h = conv.forward_batch(h)
            h = pool.forward_batch(h)
            spatial.append(h.shape[2:])
            taps.append(gap_batch(h))
        fused = self._fuse(taps)
        dropped, mask = dropout_batch(fused, self.dropout_p, train, dropout_stream)
        logits = self.head.forward_batch(dropped)
        self._cache = (spatial, mask)
        return logits

    def forward_backward(self, x, labels, train=True, dropout_stream=None):
        """Mean loss, top-1 accuracy, and mean parameter gradients for a batch."""
        if x.shape[0] == 0:
            raise ShapeError("empty batch")
        logits = self.forward_batch(x, train=train, dropout_stream=dropout_stream)
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError("non-finite logits")
        losses, dlogits = softmax_ce_batch(logits, labels)
        loss = float(losses.mean())
        acc = float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
        dlogits /= x.shape[0]

        spatial, mask = self._cache
        if self.fusion == "kpff":
            self.grad_fusion_ws[:] = 0.0
        dfused = self.head.backward_batch(dlogits)
        if mask is not None:
            dfused = dfused * mask
        dtaps = self._fuse_backward(dfused)

        dh = None
        for b in range(len(self.convs) - 1, -1, -1):
            dpool = gap_backward_batch(dtaps[b], spatial[b]) if dtaps[b] is not None else 0.0
            dh = dpool if dh is None else dh + dpool
            dh = self.pools[b].backward_batch(dh)
            dh = self.convs[b].backward_batch(dh)

        grads = {}
        for b, conv in enumerate(self.convs):
            grads[f"conv{b}.kernels"] = conv.grads["kernels"]
            grads[f"conv{b}.bias"] = conv.grads["bias"]
        for b, proj in enumerate(self.projections):
            grads[f"proj{b}.weights"] = proj.grads["weights"]
            grads[f"proj{b}.bias"] = proj.grads["bias"]
        if self.fusion == "kpff":
            grads["fusion.ws"] = self.grad_fusion_ws.copy()
        grads["head.weights"] = self.head.grads["weights"]
        grads["head.bias"] = self.head.grads["bias"]
        return loss, acc, grads

    def evaluate(self, x, labels):
        logits = self.forward_batch(x, train=False)
        losses, _ = softmax_ce_batch(logits, labels)
        acc = float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
        return float(losses.mean()), acc
