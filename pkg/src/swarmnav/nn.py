"""Differentiable building blocks over float64 torch tensors.

Reverse-mode differentiation is delegated to torch autograd; everything else
(parameter store, initialization, Adam, attention with exact key masking)
lives here. All functions are deterministic in single-threaded CPU mode,
which the trainer relies on for bit-identical reruns.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import HeadDivisibility, NotScalarLoss, ShapeMismatch

DTYPE = torch.float64

torch.set_default_dtype(torch.float64)


def tensor(a, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(a), dtype=DTYPE)
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


class ParamStore:
    """Named parameter tensors with stable order plus Adam moment slots."""

    def __init__(self):
        self._params: dict[str, torch.Tensor] = {}
        self._m: dict[str, torch.Tensor] = {}
        self._v: dict[str, torch.Tensor] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> torch.Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = tensor(value, requires_grad=True)
        self._params[name] = t
        self._m[name] = torch.zeros_like(t)
        self._v[name] = torch.zeros_like(t)
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self._params.values())

    def snapshot(self) -> dict:
        """Plain-array copy of parameters and optimizer slots."""
        return {
            "params": {k: t.detach().numpy().copy() for k, t in self._params.items()},
            "adam_m": {k: t.numpy().copy() for k, t in self._m.items()},
            "adam_v": {k: t.numpy().copy() for k, t in self._v.items()},
            "step_count": self.step_count,
        }

    def load_snapshot(self, snap: dict) -> None:
        if set(snap["params"]) != set(self._params):
            missing = set(self._params) ^ set(snap["params"])
            raise ShapeMismatch(f"parameter name sets differ: {sorted(missing)}")
        with torch.no_grad():
            for k, arr in snap["params"].items():
                if tuple(arr.shape) != tuple(self._params[k].shape):
                    raise ShapeMismatch(
                        f"{k}: stored shape {tuple(arr.shape)} vs model shape {tuple(self._params[k].shape)}"
                    )
                self._params[k].copy_(tensor(arr))
                self._m[k].copy_(tensor(snap["adam_m"][k]))
                self._v[k].copy_(tensor(snap["adam_v"][k]))
        self.step_count = int(snap["step_count"])


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with draws outside two deviations resampled."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def linear(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear: input {tuple(x.shape)} vs weight {tuple(w.shape)}")
    y = x @ w
    return y if b is None else y + b


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeMismatch(f"layer_norm: input {tuple(x.shape)} vs gain {tuple(gain.shape)}")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def softmax_rows(x: torch.Tensor) -> torch.Tensor:
    return torch.softmax(x, dim=-1)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.gelu(x)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mse: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def concat(parts, dim: int = -1) -> torch.Tensor:
    return torch.cat(list(parts), dim=dim)


def slice_range(x: torch.Tensor, start: int, stop: int, dim: int = -1) -> torch.Tensor:
    return x.narrow(dim, start, stop - start)


def multi_head_self_attention(
    x: torch.Tensor,
    params: dict[str, torch.Tensor],
    heads: int,
    mask: torch.Tensor | None = None,
    causal: bool = False,
) -> torch.Tensor:
    """Self-attention over tokens; masked keys get exactly zero weight.

    ``x`` is (T, d) or (B, T, d); ``mask`` marks valid tokens, (T,) or (B, T).
    Output rows at masked query positions are zero. ``params`` holds
    Wq/Wk/Wv (d x width) and Wo (width x d_out) plus optional biases; the
    attention width must be divisible by ``heads``.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
        if mask is not None:
            mask = mask.unsqueeze(0)
    b, t, _ = x.shape

    if mask is not None:
        # Zero masked tokens before projecting: their keys get -inf logits
        # anyway, but this keeps 0-weight * value products finite even if a
        # masked slot carries garbage.
        x = torch.where(mask[..., None], x, torch.zeros((), dtype=x.dtype))
    q = linear(x, params["Wq"], params.get("bq"))
    k = linear(x, params["Wk"], params.get("bk"))
    v = linear(x, params["Wv"], params.get("bv"))
    width = q.shape[-1]
    if width % heads != 0:
        raise HeadDivisibility(f"width {width} not divisible by {heads} heads")
    dh = width // heads
    q = q.reshape(b, t, heads, dh).permute(0, 2, 1, 3)
    k = k.reshape(b, t, heads, dh).permute(0, 2, 1, 3)
    v = v.reshape(b, t, heads, dh).permute(0, 2, 1, 3)

    logits = q @ k.transpose(-1, -2) / dh**0.5  # (b, heads, t, t)
    neg_inf = torch.tensor(float("-inf"), dtype=x.dtype)
    if mask is not None:
        logits = torch.where(mask[:, None, None, :], logits, neg_inf)
    if causal:
        tri = torch.ones(t, t, dtype=torch.bool).tril()
        logits = torch.where(tri[None, None], logits, neg_inf)
    weights = torch.softmax(logits, dim=-1)
    out = (weights @ v).permute(0, 2, 1, 3).reshape(b, t, width)
    out = linear(out, params["Wo"], params.get("bo"))
    if mask is not None:
        out = torch.where(mask[..., None], out, torch.zeros((), dtype=x.dtype))
    return out.squeeze(0) if squeeze else out


def grad(loss: torch.Tensor, store: ParamStore, retain_graph: bool = False) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients for every store parameter (zeros if unused)."""
    if loss.numel() != 1:
        raise NotScalarLoss(f"loss has {loss.numel()} elements, expected a scalar")
    names = store.names()
    params = [store[n] for n in names]
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=retain_graph)
    return {
        n: (g if g is not None else torch.zeros_like(store[n])) for n, g in zip(names, grads)
    }


def adam_step(
    store: ParamStore,
    grads: dict[str, torch.Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Adam with bias correction; one shared step counter per store."""
    store.step_count += 1
    t = store.step_count
    with torch.no_grad():
        for name in store.names():
            g = grads[name]
            p = store[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"{name}: grad {tuple(g.shape)} vs param {tuple(p.shape)}")
            m = store._m[name]
            v = store._v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))


def finite_difference_gradients(
    loss_fn,
    store: ParamStore,
    h: float = 1e-5,
    names: list[str] | None = None,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` for each parameter entry.

    ``loss_fn`` must be a pure forward evaluation returning a scalar tensor;
    parameters are perturbed in place and restored.
    """
    out: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for name in names if names is not None else store.names():
            p = store[name]
            flat = p.reshape(-1)
            g = np.zeros(flat.shape[0])
            for idx in range(flat.shape[0]):
                orig = flat[idx].item()
                flat[idx] = orig + h
                up = float(loss_fn())
                flat[idx] = orig - h
                down = float(loss_fn())
                flat[idx] = orig
                g[idx] = (up - down) / (2.0 * h)
            out[name] = g.reshape(tuple(p.shape))
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
