"""Gaussian actor and value critic over the encoder's policy features.

The actor is a two-layer perceptron producing four squashed action means;
the log standard deviations are free parameters shared across states and
clamped to [-5, 2]. The critic mirrors the actor's shape with a scalar head.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .nn import ParamStore, linear, tanh, trunc_normal

ACTION_CHANNELS = 4
HIDDEN = 64
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


def init_policy_params(store: ParamStore, feature_dim: int, rng: np.random.Generator) -> None:
    store.add("actor.W1", trunc_normal(rng, (feature_dim, HIDDEN)))
    store.add("actor.b1", np.zeros(HIDDEN))
    store.add("actor.W2", trunc_normal(rng, (HIDDEN, ACTION_CHANNELS)))
    store.add("actor.b2", np.zeros(ACTION_CHANNELS))
    store.add("actor.log_std", np.zeros(ACTION_CHANNELS))
    store.add("critic.W1", trunc_normal(rng, (feature_dim, HIDDEN)))
    store.add("critic.b1", np.zeros(HIDDEN))
    store.add("critic.W2", trunc_normal(rng, (HIDDEN, 1)))
    store.add("critic.b2", np.zeros(1))


def actor_mean(store: ParamStore, features: torch.Tensor) -> torch.Tensor:
    h = tanh(linear(features, store["actor.W1"], store["actor.b1"]))
    return tanh(linear(h, store["actor.W2"], store["actor.b2"]))


def actor_log_std(store: ParamStore) -> torch.Tensor:
    return store["actor.log_std"].clamp(LOG_STD_MIN, LOG_STD_MAX)


def critic_value(store: ParamStore, features: torch.Tensor) -> torch.Tensor:
    h = tanh(linear(features, store["critic.W1"], store["critic.b1"]))
    return linear(h, store["critic.W2"], store["critic.b2"])[..., 0]


def gaussian_log_prob(actions: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Diagonal-Gaussian log density, summed over action channels."""
    z = (actions - mean) / torch.exp(log_std)
    per = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    return per.sum(dim=-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return (0.5 + 0.5 * _LOG_2PI + log_std).sum()


def sample_actions(mean: torch.Tensor, log_std: torch.Tensor, noise: np.ndarray) -> torch.Tensor:
    """mean + std * noise with externally supplied unit-normal noise."""
    return mean + torch.exp(log_std) * torch.as_tensor(noise, dtype=mean.dtype)
