"""Minimal dense kernels with hand-derived gradients.

Layers: linear, bidirectional GRU (single layer), 2-layer MLP. Training
machinery: AdamW with decoupled weight decay, global-norm gradient
clipping, and a central-finite-difference gradient checker.

Conventions fixed here (and relied on by the gradient tests):

* GRU gates:   z = sigmoid(Wz x + Uz h + bz)
               r = sigmoid(Wr x + Ur h + br)
               c = tanh(Wh x + Uh (r * h) + bh)
               h' = (1 - z) * h + z * c
  with zero initial hidden state; a bidirectional encoder returns
  [forward last hidden || backward last hidden].
* Parameter init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor,
  where fan_in is the tensor's input dimension (the hidden size for
  recurrent matrices and biases).
* All arithmetic is float64; parameters and gradients live in flat
  name -> ndarray mappings so the optimizer and clipper are shape-agnostic.

Everything is pure given its inputs except ``adamw_step``, which updates
parameters and moments in place (the optimizer step is the one exclusive
operation in the training loop).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import expit as sigmoid

Tensors = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# Linear


@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def tensors(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> LinearParams:
    bound = 1.0 / np.sqrt(n_in)
    return LinearParams(
        weight=rng.uniform(-bound, bound, size=(n_out, n_in)),
        bias=rng.uniform(-bound, bound, size=n_out),
    )


def linear_apply(p: LinearParams, x: np.ndarray) -> np.ndarray:
    """weight @ x + bias; x may be a vector or any (..., in) stack."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.weight.shape[1]:
        raise ValueError(
            f"linear input dim {x.shape[-1]} does not match weight in-dim {p.weight.shape[1]}"
        )
    return x @ p.weight.T + p.bias


def linear_backward(p: LinearParams, x: np.ndarray, dout: np.ndarray):
    """Gradients of a stack of linear applications.

    x: (..., in), dout: (..., out). Returns (dx, dweight, dbias) with the
    weight/bias gradients summed over all leading axes.
    """
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dweight = d2.T @ x2
    dbias = d2.sum(axis=0)
    dx = (d2 @ p.weight).reshape(x.shape)
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# Activations (value function and derivative w.r.t. the pre-activation)

ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruDirectionParams:
    w_z: np.ndarray  # (h, in)
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray  # (h, h)
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray  # (h,)
    b_r: np.ndarray
    b_h: np.ndarray

    FIELDS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")

    @property
    def hidden(self) -> int:
        return self.w_z.shape[0]

    def tensors(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.FIELDS:
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class GruParams:
    fw: GruDirectionParams
    bw: GruDirectionParams

    @property
    def hidden(self) -> int:
        return self.fw.hidden

    def tensors(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.fw.tensors(f"{prefix}.fw")
        yield from self.bw.tensors(f"{prefix}.bw")


def init_gru_direction(rng: np.random.Generator, n_in: int, hidden: int) -> GruDirectionParams:
    bi = 1.0 / np.sqrt(n_in)
    bh = 1.0 / np.sqrt(hidden)
    return GruDirectionParams(
        w_z=rng.uniform(-bi, bi, size=(hidden, n_in)),
        w_r=rng.uniform(-bi, bi, size=(hidden, n_in)),
        w_h=rng.uniform(-bi, bi, size=(hidden, n_in)),
        u_z=rng.uniform(-bh, bh, size=(hidden, hidden)),
        u_r=rng.uniform(-bh, bh, size=(hidden, hidden)),
        u_h=rng.uniform(-bh, bh, size=(hidden, hidden)),
        b_z=rng.uniform(-bh, bh, size=hidden),
        b_r=rng.uniform(-bh, bh, size=hidden),
        b_h=rng.uniform(-bh, bh, size=hidden),
    )


def init_gru(rng: np.random.Generator, n_in: int, hidden: int) -> GruParams:
    return GruParams(
        fw=init_gru_direction(rng, n_in, hidden),
        bw=init_gru_direction(rng, n_in, hidden),
    )


@dataclass
class _GruCache:
    xs: np.ndarray      # (B, T, in)
    mask: np.ndarray    # (B, T) of {0.0, 1.0}
    steps: list         # per step: (h_prev, z, r, c)


def _gru_dir_forward(p: GruDirectionParams, xs: np.ndarray, mask: np.ndarray):
    """Run one direction over a right-padded batch.

    Padded steps (mask 0) carry the hidden state through unchanged, so the
    final state equals each sequence's own last hidden state.
    """
    n_batch, n_steps, _ = xs.shape
    h = np.zeros((n_batch, p.hidden))
    steps = []
    for t in range(n_steps):
        x = xs[:, t]
        m = mask[:, t][:, None]
        z = sigmoid(x @ p.w_z.T + h @ p.u_z.T + p.b_z)
        r = sigmoid(x @ p.w_r.T + h @ p.u_r.T + p.b_r)
        c = np.tanh(x @ p.w_h.T + (r * h) @ p.u_h.T + p.b_h)
        h_new = (1.0 - z) * h + z * c
        steps.append((h, z, r, c))
        h = m * h_new + (1.0 - m) * h
    return h, _GruCache(xs=xs, mask=mask, steps=steps)


def _gru_dir_backward(p: GruDirectionParams, cache: _GruCache, dh_last: np.ndarray):
    """Reverse-mode pass for one direction; returns (dxs, grads dict)."""
    grads = {name: np.zeros_like(getattr(p, name)) for name in GruDirectionParams.FIELDS}
    dxs = np.zeros_like(cache.xs)
    dh = dh_last.copy()
    for t in range(len(cache.steps) - 1, -1, -1):
        h_prev, z, r, c = cache.steps[t]
        x = cache.xs[:, t]
        m = cache.mask[:, t][:, None]
        dh_new = dh * m
        dh_prev = dh * (1.0 - m)

        dz = dh_new * (c - h_prev)
        dc = dh_new * z
        dh_prev += dh_new * (1.0 - z)

        da_c = dc * (1.0 - c**2)
        grads["w_h"] += da_c.T @ x
        grads["u_h"] += da_c.T @ (r * h_prev)
        grads["b_h"] += da_c.sum(axis=0)
        d_rh = da_c @ p.u_h
        dh_prev += d_rh * r
        dr = d_rh * h_prev

        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        grads["w_z"] += da_z.T @ x
        grads["u_z"] += da_z.T @ h_prev
        grads["b_z"] += da_z.sum(axis=0)
        grads["w_r"] += da_r.T @ x
        grads["u_r"] += da_r.T @ h_prev
        grads["b_r"] += da_r.sum(axis=0)

        dh_prev += da_z @ p.u_z + da_r @ p.u_r
        dxs[:, t] = da_z @ p.w_z + da_r @ p.w_r + da_c @ p.w_h
        dh = dh_prev
    return dxs, grads


def _reverse_padded(xs: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each sequence within its own length, leaving padding in place."""
    n_batch, n_steps = xs.shape[0], xs.shape[1]
    idx = np.arange(n_steps)[None, :].repeat(n_batch, axis=0)
    rev = lengths[:, None] - 1 - idx
    sel = np.where(idx < lengths[:, None], rev, idx)
    return np.take_along_axis(xs, sel[:, :, None], axis=1)


def _length_mask(lengths: np.ndarray, n_steps: int) -> np.ndarray:
    return (np.arange(n_steps)[None, :] < lengths[:, None]).astype(np.float64)


@dataclass
class _BiGruCache:
    lengths: np.ndarray
    fw: _GruCache
    bw: _GruCache


def bigru_forward(p: GruParams, xs: np.ndarray, lengths: np.ndarray):
    """Bidirectional encoding of a right-padded batch.

    xs: (B, T, in); lengths: (B,), each >= 1. Returns ((B, 2h), cache):
    the concatenation of the forward direction's last hidden state and the
    backward direction's last hidden state (computed over each sequence
    reversed in place).
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if xs.ndim != 3 or xs.shape[1] == 0:
        raise ValueError(f"expected non-empty (B, T, in) input, got shape {np.shape(xs)}")
    if (lengths < 1).any():
        raise ValueError("every sequence must have length >= 1")
    mask = _length_mask(lengths, xs.shape[1])
    h_fw, cache_fw = _gru_dir_forward(p.fw, xs, mask)
    h_bw, cache_bw = _gru_dir_forward(p.bw, _reverse_padded(xs, lengths), mask)
    return np.concatenate([h_fw, h_bw], axis=1), _BiGruCache(lengths, cache_fw, cache_bw)


def bigru_backward(p: GruParams, cache: _BiGruCache, dh: np.ndarray):
    """Gradients of bigru_forward; dh is (B, 2h). Returns (dxs, grads)."""
    hidden = p.hidden
    dxs_fw, grads_fw = _gru_dir_backward(p.fw, cache.fw, dh[:, :hidden])
    dxs_bw_rev, grads_bw = _gru_dir_backward(p.bw, cache.bw, dh[:, hidden:])
    dxs = dxs_fw + _reverse_padded(dxs_bw_rev, cache.lengths)
    grads = {f"fw.{k}": v for k, v in grads_fw.items()}
    grads.update({f"bw.{k}": v for k, v in grads_bw.items()})
    return dxs, grads


def bigru_encode(p: GruParams, seq) -> np.ndarray:
    """Encode a single sequence (list of vectors or (T, in) array) to a
    (2h,) vector: [forward last hidden || backward last hidden]."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError(f"expected a non-empty (T, in) sequence, got shape {seq.shape}")
    if seq.shape[1] != p.fw.w_z.shape[1]:
        raise ValueError(
            f"sequence dim {seq.shape[1]} does not match GRU input dim {p.fw.w_z.shape[1]}"
        )
    out, _ = bigru_forward(p, seq[None, :, :], np.array([seq.shape[0]]))
    return out[0]


# ---------------------------------------------------------------------------
# MLP (exactly two layers: linear -> activation -> linear, raw logits out)


@dataclass
class MlpParams:
    layers: list[LinearParams]

    def __post_init__(self):
        if len(self.layers) != 2:
            raise ValueError(f"MLP head must have exactly 2 layers, got {len(self.layers)}")

    def tensors(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            yield from layer.tensors(f"{prefix}.{i}")


def init_mlp(rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int) -> MlpParams:
    return MlpParams(layers=[init_linear(rng, n_in, n_hidden), init_linear(rng, n_hidden, n_out)])


def mlp_forward(p: MlpParams, x: np.ndarray, hidden_activation: str = "relu"):
    act, _ = ACTIVATIONS[hidden_activation]
    z1 = linear_apply(p.layers[0], x)
    a1 = act(z1)
    logits = linear_apply(p.layers[1], a1)
    return logits, (x, z1, a1, hidden_activation)


def mlp_apply(p: MlpParams, x: np.ndarray, hidden_activation: str = "relu") -> np.ndarray:
    """layer1 -> activation -> layer2; output is raw logits."""
    logits, _ = mlp_forward(p, x, hidden_activation)
    return logits


def mlp_backward(p: MlpParams, cache, dlogits: np.ndarray):
    """Returns (dx, grads dict keyed 0.weight/0.bias/1.weight/1.bias)."""
    x, z1, a1, activation = cache
    _, dact = ACTIVATIONS[activation]
    da1, dw1_out, db1_out = linear_backward(p.layers[1], a1, dlogits)
    dz1 = da1 * dact(z1)
    dx, dw0, db0 = linear_backward(p.layers[0], x, dz1)
    return dx, {"0.weight": dw0, "0.bias": db0, "1.weight": dw1_out, "1.bias": db1_out}


# ---------------------------------------------------------------------------
# Gradient clipping


def global_norm(grads: Tensors) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: Tensors, max_norm: float) -> Tensors:
    """Scale all gradients by max_norm/||g|| when ||g|| exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return {k: v.copy() for k, v in grads.items()}
    scale = max_norm / norm
    return {k: v * scale for k, v in grads.items()}


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class OptimizerState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    step: int
    m: Tensors
    v: Tensors


def adamw_init(tensors: Tensors, lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        step=0,
        m={k: np.zeros_like(t) for k, t in tensors.items()},
        v={k: np.zeros_like(t) for k, t in tensors.items()},
    )


def adamw_step(state: OptimizerState, tensors: Tensors, grads: Tensors):
    """One bias-corrected Adam update with decoupled weight decay.

    Parameters and moments are updated in place; the (tensors, state) pair
    is returned for convenience.
    """
    if set(tensors) != set(grads):
        raise ValueError("parameter and gradient names do not match")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, theta in tensors.items():
        g = grads[name]
        if theta.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        theta -= state.lr * update
        theta -= state.lr * state.weight_decay * theta
    return tensors, state


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def finite_difference_gradients(loss_fn: Callable[[], float], tensors: Tensors,
                                step: float = 1e-5) -> Tensors:
    """Central-difference gradient of a scalar loss w.r.t. every tensor entry.

    ``loss_fn`` must read the current values of ``tensors``; entries are
    perturbed in place and restored. This is the independent oracle used by
    ``grad_check`` and deliberately knows nothing about backpropagation.
    """
    out: Tensors = {}
    for name, theta in tensors.items():
        grad = np.zeros_like(theta)
        flat = theta.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            loss_plus = loss_fn()
            flat[i] = original - step
            loss_minus = loss_fn()
            flat[i] = original
            gflat[i] = (loss_plus - loss_minus) / (2.0 * step)
        out[name] = grad
    return out


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    tolerance: float

    @property
    def max_relative_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def __str__(self) -> str:
        lines = [
            f"{name:<28s} max rel err {err:.3e}"
            for name, err in sorted(self.per_tensor.items(), key=lambda kv: -kv[1])
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"overall {self.max_relative_error:.3e} vs tolerance {self.tolerance:.1e}: {verdict}")
        return "\n".join(lines)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray,
                    floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|) elementwise; entries where both magnitudes
    fall below ``floor`` count as exact (both gradients vanish)."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) / np.maximum(scale, floor)
    return np.where(scale < floor, 0.0, err)


def grad_check(loss_fn: Callable[[], float], grad_fn: Callable[[], Tensors],
               tensors: Tensors, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against the finite-difference oracle.

    ``grad_fn`` returns the analytic gradients at the current parameter
    values; ``loss_fn`` evaluates the same scalar loss. Only models small
    enough for O(P) loss evaluations should go through here.
    """
    analytic = grad_fn()
    numeric = finite_difference_gradients(loss_fn, tensors, step=step)
    per_tensor = {
        name: float(relative_errors(analytic[name], numeric[name]).max())
        if analytic[name].size
        else 0.0
        for name in tensors
    }
    return GradCheckReport(per_tensor=per_tensor, tolerance=tolerance)
