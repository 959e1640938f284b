"""Dual encoder: spatial attention over drone token triples, temporal
attention over the embedding history, and an autoregressive dynamics
predictor.

Spatial stage: each drone slot contributes three tokens (projected
observation, previous action, previous reward); a learned decision token is
prepended and its output row is the drone's spatial embedding. Padded
neighbor slots are masked out of attention, so their values cannot influence
the embedding.

Temporal stage: the last up-to-L spatial embeddings are projected, given
window-position embeddings (index 0 = oldest entry), and run through causally
masked attention, so every position's output depends only on its prefix. The
last valid position's output is the policy embedding.

The dynamics predictor maps (previous temporal embedding, joint actions,
joint rewards) to the next temporal embedding through a single affine + tanh
layer; its mean-squared error is the auxiliary training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConflictingFlags, ShapeMismatch, WindowTooLong
from .nn import ParamStore, gelu, layer_norm, linear, mse, multi_head_self_attention, tanh, trunc_normal

ACT_TOKEN_DIM = 5  # action channels + presence flag


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 149  # spatial embedding width
    temporal_dim: int = 149  # temporal embedding width
    spatial_layers: int = 3
    spatial_heads: int = 6
    temporal_layers: int = 3
    temporal_heads: int = 6
    horizon: int = 20  # temporal window length L
    n_neighbors: int = 4

    @property
    def token_count(self) -> int:
        return 3 * (self.n_neighbors + 1) + 1

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for v in (self.embed_dim, self.temporal_dim, self.spatial_layers, self.temporal_layers):
            if v < 1:
                raise ValueError("encoder dimensions and layer counts must be positive")


@dataclass(frozen=True)
class AblationFlags:
    no_spatial: bool = False
    no_temporal_gru: bool = False
    no_residual: bool = False
    plain_ppo: bool = False
    literal_pred_target: bool = False

    def validate(self) -> None:
        primary = [self.no_spatial, self.no_temporal_gru, self.plain_ppo]
        if sum(primary) > 1:
            raise ConflictingFlags("no_spatial, no_temporal_gru and plain_ppo are mutually exclusive")
        if self.plain_ppo and self.no_residual:
            raise ConflictingFlags("plain_ppo keeps only the observation path; no_residual would remove it")


def attention_width(dim: int, heads: int) -> int:
    """Smallest head-divisible width >= dim."""
    return heads * math.ceil(dim / heads)


def _init_block(store: ParamStore, prefix: str, dim: int, heads: int, rng: np.random.Generator) -> None:
    width = attention_width(dim, heads)
    store.add(f"{prefix}.ln1.gain", np.ones(dim))
    store.add(f"{prefix}.ln1.bias", np.zeros(dim))
    for name in ("Wq", "Wk", "Wv"):
        store.add(f"{prefix}.attn.{name}", trunc_normal(rng, (dim, width)))
        store.add(f"{prefix}.attn.b{name[1].lower()}", np.zeros(width))
    store.add(f"{prefix}.attn.Wo", trunc_normal(rng, (width, dim)))
    store.add(f"{prefix}.attn.bo", np.zeros(dim))
    store.add(f"{prefix}.ln2.gain", np.ones(dim))
    store.add(f"{prefix}.ln2.bias", np.zeros(dim))
    store.add(f"{prefix}.ffn.W1", trunc_normal(rng, (dim, 4 * dim)))
    store.add(f"{prefix}.ffn.b1", np.zeros(4 * dim))
    store.add(f"{prefix}.ffn.W2", trunc_normal(rng, (4 * dim, dim)))
    store.add(f"{prefix}.ffn.b2", np.zeros(dim))


def _block_forward(
    x: torch.Tensor,
    store: ParamStore,
    prefix: str,
    heads: int,
    mask: torch.Tensor | None,
    causal: bool,
) -> torch.Tensor:
    h = layer_norm(x, store[f"{prefix}.ln1.gain"], store[f"{prefix}.ln1.bias"])
    attn = {k: store[f"{prefix}.attn.{k}"] for k in ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")}
    x = x + multi_head_self_attention(h, attn, heads, mask=mask, causal=causal)
    h = layer_norm(x, store[f"{prefix}.ln2.gain"], store[f"{prefix}.ln2.bias"])
    ff = linear(gelu(linear(h, store[f"{prefix}.ffn.W1"], store[f"{prefix}.ffn.b1"])), store[f"{prefix}.ffn.W2"], store[f"{prefix}.ffn.b2"])
    return x + ff


class DualEncoder:
    """Parameter owner and forward passes for one encoder variant."""

    def __init__(
        self,
        cfg: EncoderConfig,
        obs_dim: int,
        flags: AblationFlags | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.flags = flags or AblationFlags()
        self.flags.validate()
        self.joint_act_dim = ACT_TOKEN_DIM * (cfg.n_neighbors + 1)
        self.joint_rew_dim = cfg.n_neighbors + 1

    # ---- parameter construction -------------------------------------------------

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        cfg = self.cfg
        if self.flags.plain_ppo:
            return
        store.add("spatial.W_o", trunc_normal(rng, (self.obs_dim + 1, cfg.embed_dim)))
        store.add("spatial.W_a", trunc_normal(rng, (ACT_TOKEN_DIM, cfg.embed_dim)))
        store.add("spatial.W_r", trunc_normal(rng, (1, cfg.embed_dim)))
        if self.flags.no_spatial:
            store.add("spatial_pool.W1", trunc_normal(rng, (cfg.embed_dim, cfg.embed_dim)))
            store.add("spatial_pool.b1", np.zeros(cfg.embed_dim))
            store.add("spatial_pool.W2", trunc_normal(rng, (cfg.embed_dim, cfg.embed_dim)))
            store.add("spatial_pool.b2", np.zeros(cfg.embed_dim))
        else:
            store.add("spatial.q_decision", trunc_normal(rng, (cfg.embed_dim,)))
            store.add("spatial.pos_emb", trunc_normal(rng, (cfg.token_count, cfg.embed_dim)))
            for i in range(cfg.spatial_layers):
                _init_block(store, f"spatial.block{i}", cfg.embed_dim, cfg.spatial_heads, rng)
        if self.flags.no_temporal_gru:
            for gate in ("z", "r", "n"):
                store.add(f"gru.W{gate}", trunc_normal(rng, (cfg.embed_dim, cfg.temporal_dim)))
                store.add(f"gru.U{gate}", trunc_normal(rng, (cfg.temporal_dim, cfg.temporal_dim)))
                store.add(f"gru.b{gate}", np.zeros(cfg.temporal_dim))
        else:
            store.add("temporal.W_prime", trunc_normal(rng, (cfg.embed_dim, cfg.temporal_dim)))
            store.add("temporal.pos_emb", trunc_normal(rng, (cfg.horizon, cfg.temporal_dim)))
            for i in range(cfg.temporal_layers):
                _init_block(store, f"temporal.block{i}", cfg.temporal_dim, cfg.temporal_heads, rng)
        pred_in = cfg.temporal_dim + self.joint_act_dim + self.joint_rew_dim
        store.add("predictor.W", trunc_normal(rng, (pred_in, cfg.temporal_dim)))
        store.add("predictor.b", np.zeros(cfg.temporal_dim))

    def init_residual(self, store: ParamStore, rng: np.random.Generator) -> None:
        needs_proj = self.obs_dim != self.cfg.temporal_dim
        if self.flags.no_residual:
            return
        if needs_proj:
            store.add("residual.P_o", trunc_normal(rng, (self.obs_dim, self.cfg.temporal_dim)))

    # ---- forward passes ----------------------------------------------------------

    def spatial_forward(
        self,
        store: ParamStore,
        obs: torch.Tensor,  # (B, n+1, obs_dim+1)
        act: torch.Tensor,  # (B, n+1, ACT_TOKEN_DIM)
        rew: torch.Tensor,  # (B, n+1, 1)
    ) -> torch.Tensor:
        cfg = self.cfg
        if obs.shape[-1] != self.obs_dim + 1:
            raise ShapeMismatch(f"obs tokens {tuple(obs.shape)} vs expected last dim {self.obs_dim + 1}")
        if obs.shape[-2] != cfg.n_neighbors + 1:
            raise ShapeMismatch(f"{obs.shape[-2]} drone slots vs configured {cfg.n_neighbors + 1}")
        o_tok = linear(obs, store["spatial.W_o"])
        a_tok = linear(act, store["spatial.W_a"])
        r_tok = linear(rew, store["spatial.W_r"])
        triples = torch.stack([o_tok, a_tok, r_tok], dim=2)  # (B, n+1, 3, d)
        b = obs.shape[0]
        tokens = triples.reshape(b, 3 * (cfg.n_neighbors + 1), cfg.embed_dim)

        if self.flags.no_spatial:
            pooled = tokens.mean(dim=1)
            h = linear(gelu(linear(pooled, store["spatial_pool.W1"], store["spatial_pool.b1"])), store["spatial_pool.W2"], store["spatial_pool.b2"])
            return h

        decision = store["spatial.q_decision"].expand(b, 1, cfg.embed_dim)
        x = torch.cat([decision, tokens], dim=1) + store["spatial.pos_emb"]
        presence = obs[..., -1] > 0.5  # (B, n+1)
        token_mask = presence[:, :, None].expand(b, cfg.n_neighbors + 1, 3).reshape(b, -1)
        mask = torch.cat([torch.ones(b, 1, dtype=torch.bool), token_mask], dim=1)
        for i in range(cfg.spatial_layers):
            x = _block_forward(x, store, f"spatial.block{i}", cfg.spatial_heads, mask, causal=False)
        return x[:, 0, :]

    def temporal_forward(
        self,
        store: ParamStore,
        h_seq: torch.Tensor,  # (B, L, embed_dim), zero-padded past each length
        lengths: torch.Tensor,  # (B,) ints in [1, L]
    ) -> torch.Tensor:
        cfg = self.cfg
        if h_seq.shape[1] > cfg.horizon:
            raise WindowTooLong(f"window of {h_seq.shape[1]} exceeds horizon {cfg.horizon}")
        b, w, _ = h_seq.shape
        lengths = torch.as_tensor(lengths).long()
        valid = torch.arange(w)[None, :] < lengths[:, None]
        if self.flags.no_temporal_gru:
            return self._gru_forward(store, h_seq, valid)
        x = linear(h_seq, store["temporal.W_prime"]) + store["temporal.pos_emb"][:w]
        for i in range(cfg.temporal_layers):
            x = _block_forward(x, store, f"temporal.block{i}", cfg.temporal_heads, valid, causal=True)
        return x

    def _gru_forward(self, store: ParamStore, h_seq: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        b, w, _ = h_seq.shape
        h = torch.zeros(b, self.cfg.temporal_dim)
        outputs = []
        for p in range(w):
            x = h_seq[:, p, :]
            z = torch.sigmoid(linear(x, store["gru.Wz"]) + linear(h, store["gru.Uz"]) + store["gru.bz"])
            r = torch.sigmoid(linear(x, store["gru.Wr"]) + linear(h, store["gru.Ur"]) + store["gru.br"])
            n = tanh(linear(x, store["gru.Wn"]) + linear(r * h, store["gru.Un"]) + store["gru.bn"])
            h_new = (1.0 - z) * n + z * h
            h = torch.where(valid[:, p : p + 1], h_new, h)
            outputs.append(h)
        return torch.stack(outputs, dim=1)

    def predict_dynamics(
        self,
        store: ParamStore,
        h_prev: torch.Tensor,  # (B, temporal_dim)
        joint_actions: torch.Tensor,  # (B, (n+1) * ACT_TOKEN_DIM)
        joint_rewards: torch.Tensor,  # (B, n+1)
    ) -> torch.Tensor:
        x = torch.cat([h_prev, joint_actions, joint_rewards], dim=-1)
        expected = self.cfg.temporal_dim + self.joint_act_dim + self.joint_rew_dim
        if x.shape[-1] != expected:
            raise ShapeMismatch(f"predictor input {tuple(x.shape)} vs expected width {expected}")
        return tanh(linear(x, store["predictor.W"], store["predictor.b"]))

    def prediction_loss(self, predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """MSE against the target embedding; no gradient flows into the target."""
        return mse(predicted, target.detach())

    def policy_input(self, store: ParamStore, h_out: torch.Tensor, o_self: torch.Tensor) -> torch.Tensor:
        """Temporal embedding plus (projected) self-observation residual."""
        if self.flags.no_residual:
            return h_out
        res = o_self if "residual.P_o" not in store else linear(o_self, store["residual.P_o"])
        return h_out + res

    def window_prediction_loss(
        self,
        store: ParamStore,
        h_pos: torch.Tensor,  # (B, L, temporal_dim) per-position outputs
        window_act: torch.Tensor,  # (B, L, n+1, ACT_TOKEN_DIM)
        window_rew: torch.Tensor,  # (B, L, n+1, 1)
        lengths: torch.Tensor,
        target_override: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Mean predictor MSE over consecutive valid window positions.

        The tokens at position p carry the joint actions and rewards taken at
        p-1, so the predictor input for position p is (h_out[p-1], tokens[p]).
        No gradient flows through the target; ``target_override`` substitutes
        a frozen (B, L-1, temporal_dim) target tensor, which is what a
        finite-difference check of this loss must hold constant.
        """
        b, w, _ = h_pos.shape
        if w < 2:
            return torch.zeros(())
        lengths = torch.as_tensor(lengths).long()
        h_prev = h_pos[:, :-1, :].reshape(-1, self.cfg.temporal_dim)
        acts = window_act[:, 1:].reshape(b * (w - 1), -1)
        rews = window_rew[:, 1:].reshape(b * (w - 1), -1)
        pred = self.predict_dynamics(store, h_prev, acts, rews)
        if target_override is not None:
            target_pos = target_override
        elif self.flags.literal_pred_target:
            target_pos = h_pos[:, :-1, :]
        else:
            target_pos = h_pos[:, 1:, :]
        target = target_pos.reshape(-1, self.cfg.temporal_dim)
        pair_valid = (torch.arange(1, w)[None, :] < lengths[:, None]).reshape(-1)
        if not bool(pair_valid.any()):
            return torch.zeros(())
        diff2 = ((pred - target.detach()) ** 2).mean(dim=-1)
        return diff2[pair_valid].mean()
