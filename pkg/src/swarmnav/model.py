"""Bundles the encoder variant and policy heads behind one parameter store.

A model owns the full forward path from cached token windows to action
distribution and value, so rollout collection and training re-use the same
code and produce identical numbers.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch

from .encoder import ACT_TOKEN_DIM, AblationFlags, DualEncoder, EncoderConfig
from .nn import ParamStore
from .observe import ObsConfig
from . import policy as heads


class NavModel:
    def __init__(
        self,
        enc_cfg: EncoderConfig,
        obs_cfg: ObsConfig,
        flags: AblationFlags | None = None,
        init_seed: int = 0,
    ):
        if enc_cfg.n_neighbors != obs_cfg.n_neighbors:
            raise ValueError("encoder and observation neighbor counts must match")
        self.enc_cfg = enc_cfg
        self.obs_cfg = obs_cfg
        self.flags = flags or AblationFlags()
        self.encoder = DualEncoder(enc_cfg, obs_cfg.obs_dim, self.flags)
        self.store = ParamStore()
        rng = np.random.default_rng([0x1417AA, init_seed])
        self.encoder.init_params(self.store, rng)
        self.encoder.init_residual(self.store, rng)
        heads.init_policy_params(self.store, enc_cfg.temporal_dim, rng)

    # ---- configuration ------------------------------------------------------------

    def config_dict(self) -> dict:
        return {
            "encoder": asdict(self.enc_cfg),
            "observation": asdict(self.obs_cfg),
            "ablation": asdict(self.flags),
        }

    @classmethod
    def from_config(cls, cfg: dict, init_seed: int = 0) -> "NavModel":
        return cls(
            EncoderConfig(**cfg["encoder"]),
            ObsConfig(**cfg["observation"]),
            AblationFlags(**cfg["ablation"]),
            init_seed=init_seed,
        )

    # ---- forward ------------------------------------------------------------------

    def features_from_windows(
        self,
        window_obs: torch.Tensor,  # (B, L, n+1, obs_dim+1)
        window_act: torch.Tensor,  # (B, L, n+1, ACT_TOKEN_DIM)
        window_rew: torch.Tensor,  # (B, L, n+1, 1)
        lengths: torch.Tensor,  # (B,)
        return_positions: bool = False,
    ):
        """Policy features per window; optionally all temporal positions too."""
        b, w, slots, _ = window_obs.shape
        lengths = torch.as_tensor(lengths).long()
        idx = (lengths - 1).clamp(min=0)
        o_self = window_obs[torch.arange(b), idx, 0, : self.obs_cfg.obs_dim]

        if self.flags.plain_ppo:
            feats = self.encoder.policy_input(self.store, torch.zeros(b, self.enc_cfg.temporal_dim), o_self)
            return (feats, None) if return_positions else feats

        flat_obs = window_obs.reshape(b * w, slots, -1)
        flat_act = window_act.reshape(b * w, slots, -1)
        flat_rew = window_rew.reshape(b * w, slots, -1)
        h_spatial = self.encoder.spatial_forward(self.store, flat_obs, flat_act, flat_rew)
        h_seq = h_spatial.reshape(b, w, self.enc_cfg.embed_dim)
        h_pos = self.encoder.temporal_forward(self.store, h_seq, lengths)
        h_out = h_pos[torch.arange(b), idx]
        feats = self.encoder.policy_input(self.store, h_out, o_self)
        return (feats, h_pos) if return_positions else feats

    def action_distribution(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return heads.actor_mean(self.store, features), heads.actor_log_std(self.store)

    def value(self, features: torch.Tensor) -> torch.Tensor:
        return heads.critic_value(self.store, features)

    def prediction_loss_from_windows(self, h_pos, window_act, window_rew, lengths, target_override=None) -> torch.Tensor:
        if self.flags.plain_ppo or h_pos is None:
            return torch.zeros(())
        return self.encoder.window_prediction_loss(
            self.store, h_pos, window_act, window_rew, lengths, target_override=target_override
        )


def model_from_checkpoint(data) -> NavModel:
    """Rebuild a model from loaded checkpoint data and restore parameters."""
    model = NavModel.from_config(data.config["model"])
    model.store.load_snapshot(data.snapshot)
    return model
