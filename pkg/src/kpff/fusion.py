"""Kronecker-product feature fusion and the Add/Concat baselines it
generalizes.

The fused vector is y = sum_i w_i (x) x_i, where each x_i is a length-r
feature vector, each w_i a learnable length-n weight vector, and (x) the
Kronecker product. In 0-based indices, block k of y (the slice
y[k*r:(k+1)*r]) equals sum_i w_i[k] * x_i. Setting w_i = e_i reproduces
concatenation; setting every w_i = e_0 puts the elementwise sum in block 0
and zeros elsewhere.
"""

from dataclasses import dataclass
from contextlib import contextmanager

import numpy as np

from .tensor import Tensor, ShapeError, from_array, _freeze
from .hooks import injected_bug

# ---------------------------------------------------------------------------
# operation counters (used by the bench subcommand)

_COUNTING = False
_COUNTS = {"madd": 0, "copy": 0, "add": 0}


@contextmanager
def count_ops():
    """Count multiply-adds/copies/adds performed by fusion ops in this block."""
    global _COUNTING
    for k in _COUNTS:
        _COUNTS[k] = 0
    _COUNTING = True
    try:
        yield _COUNTS
    finally:
        _COUNTING = False


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionInputs:
    """n feature vectors of a common length r."""

    xs: tuple

    def __post_init__(self):
        if len(self.xs) < 1:
            raise ShapeError("need at least one input vector")
        r = self.xs[0].shape[0]
        for x in self.xs:
            if x.rank != 1:
                raise ShapeError(f"fusion inputs must be rank-1, got {x.shape}")
            if x.shape[0] != r:
                raise ShapeError(
                    f"fusion inputs must share one length, got {x.shape[0]} vs {r}"
                )

    @property
    def n(self) -> int:
        return len(self.xs)

    @property
    def r(self) -> int:
        return self.xs[0].shape[0]


def fusion_inputs(vectors) -> FusionInputs:
    return FusionInputs(tuple(v if isinstance(v, Tensor) else from_array(v) for v in vectors))


def unit_vector(i: int, n: int) -> Tensor:
    """e_i: component i (1-based) is 1, all others 0."""
    if not 1 <= i <= n:
        raise IndexError(f"unit vector index {i} out of range 1..{n}")
    v = np.zeros(n)
    v[i - 1] = 1.0
    return from_array(v)


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Block matrix: block (i,j) is a[i,j] * b. Rank-1 inputs are treated
    as column matrices."""
    am = a.view() if a.rank == 2 else a.data.reshape(-1, 1)
    bm = b.view() if b.rank == 2 else b.data.reshape(-1, 1)
    if am.ndim != 2 or bm.ndim != 2:
        raise ShapeError("kron supports rank-1 and rank-2 tensors only")
    m, n = am.shape
    p, q = bm.shape
    out = np.zeros((m * p, n * q))
    for i in range(m):
        for j in range(n):
            out[i * p:(i + 1) * p, j * q:(j + 1) * q] = am[i, j] * bm
    if a.rank == 1 and b.rank == 1:
        return from_array(out[:, 0])
    return from_array(out)


def fuse_add(inputs: FusionInputs) -> Tensor:
    acc = inputs.xs[0].data.copy()
    for x in inputs.xs[1:]:
        acc += x.data
        if _COUNTING:
            _COUNTS["add"] += inputs.r
    return Tensor((inputs.r,), _freeze(acc))


def fuse_concat(inputs: FusionInputs) -> Tensor:
    out = np.concatenate([x.data for x in inputs.xs])
    if _COUNTING:
        _COUNTS["copy"] += inputs.n * inputs.r
    return Tensor((inputs.n * inputs.r,), _freeze(out))


class KpffLayer:
    """Learnable fusion layer: n weight vectors of length n.

    forward caches its inputs; backward accumulates into grad_ws and
    returns the gradients w.r.t. the inputs. Not thread-safe across
    concurrent forward/backward (pure ops in this module are).
    """

    def __init__(self, ws):
        ws = [w if isinstance(w, Tensor) else from_array(w) for w in ws]
        n = len(ws)
        for w in ws:
            if w.rank != 1 or w.shape[0] != n:
                raise ShapeError(f"need {n} weight vectors of length {n}, got {w.shape}")
        self.ws = ws
        self.grad_ws = [np.zeros(n) for _ in range(n)]
        self.cache = None

    @property
    def n(self) -> int:
        return len(self.ws)

    @classmethod
    def concat_init(cls, n: int, noise_sigma: float = 0.0, rng=None):
        """Start at the concatenation configuration ws = [e_1..e_n],
        optionally perturbed by Gaussian noise."""
        ws = [np.eye(n)[i].copy() for i in range(n)]
        if noise_sigma > 0.0:
            if rng is None:
                raise ValueError("noise_sigma > 0 needs an rng stream")
            for w in ws:
                w += rng.normal(size=(n,), sigma=noise_sigma)
        return cls(ws)

    def zero_grads(self):
        for g in self.grad_ws:
            g[:] = 0.0

    def reset(self):
        self.cache = None


def kpff_forward(layer: KpffLayer, inputs: FusionInputs) -> Tensor:
    n, r = inputs.n, inputs.r
    if layer.n != n:
        raise ShapeError(f"layer has {layer.n} weight vectors, inputs have {n}")
    y = np.zeros(n * r)
    # block k accumulates sum_i ws[i][k] * xs[i], in i order so the result
    # is bit-identical to summing kron(w_i, x_i) term by term
    for k in range(n):
        blk = y[k * r:(k + 1) * r]
        for i in range(n):
            blk += layer.ws[i].data[k] * inputs.xs[i].data
            if _COUNTING:
                _COUNTS["madd"] += r
    layer.cache = inputs
    return Tensor((n * r,), _freeze(y))


def kpff_backward(layer: KpffLayer, upstream: Tensor):
    """Accumulate dL/dw into grad_ws and return [dL/dx_1 .. dL/dx_n].

    0-based forms (block b is the slice [b*r, (b+1)*r)):
      dL/dw_i[b]  = sum_c upstream[b*r + c] * x_i[c]
      dL/dx_j[c]  = sum_k upstream[k*r + c] * w_j[k]
    """
    if layer.cache is None:
        raise RuntimeError("kpff_backward called before forward (no cached inputs)")
    inputs = layer.cache
    n, r = inputs.n, inputs.r
    if upstream.rank != 1 or upstream.shape[0] != n * r:
        raise ShapeError(f"upstream must have length {n * r}, got {upstream.shape}")
    up = upstream.data

    for i in range(n):
        xi = inputs.xs[i].data
        for b in range(n):
            blk = (b + 1) % n if injected_bug() == "kpff-w" else b
            layer.grad_ws[i][b] += float(up[blk * r:(blk + 1) * r] @ xi)
            if _COUNTING:
                _COUNTS["madd"] += r

    dxs = []
    for j in range(n):
        dx = np.zeros(r)
        for k in range(n):
            wjk = layer.ws[k].data[j] if injected_bug() == "kpff-x" else layer.ws[j].data[k]
            dx += up[k * r:(k + 1) * r] * wjk
            if _COUNTING:
                _COUNTS["madd"] += r
        dxs.append(Tensor((r,), _freeze(dx)))
    return dxs


@dataclass(frozen=True)
class Projection:
    """Affine map to the common fusion dimension r: x -> W x + b."""

    weight: Tensor  # r x d_in
    bias: Tensor  # r

    def __post_init__(self):
        if self.weight.rank != 2 or self.bias.rank != 1:
            raise ShapeError("projection needs a rank-2 weight and rank-1 bias")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}"
            )

    @property
    def r(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]


def project(p: Projection, x: Tensor) -> Tensor:
    if x.rank != 1 or x.shape[0] != p.d_in:
        raise ShapeError(f"projection expects length {p.d_in}, got {x.shape}")
    return Tensor((p.r,), _freeze(p.weight.view() @ x.data + p.bias.data))
