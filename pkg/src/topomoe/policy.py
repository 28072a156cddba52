"""PPO mechanics and the token-routed expert decision heads.

The policy and value networks share one architecture: a first dense layer
splits into equal-size tokens, tokens are softly dispatched to experts,
expert outputs are recombined per token, and a learned softmax over tokens
mixes the token outputs into the block output that feeds the final layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .config import RunConfig
from .errors import ShapeError


@dataclass
class HeadParams:
    w1: eg.Tensor      # (d_obs, first_layer)
    b1: eg.Tensor
    router: eg.Tensor  # (token_size, P)
    mixer: eg.Tensor   # (token_size, 1)
    w_exp: eg.Tensor   # (P, token_size, tmoe_out)
    b_exp: eg.Tensor   # (P, tmoe_out)
    w_out: eg.Tensor   # (tmoe_out, out_dim)
    b_out: eg.Tensor


def build_head_params(store: eg.ParameterStore, prefix: str, out_dim: int,
                      cfg: RunConfig, rng: np.random.Generator) -> HeadParams:
    ts, p, width = cfg.token_size, cfg.experts, cfg.tmoe_out
    w1, b1 = eg.init_affine(store, f"{prefix}/in", cfg.d_obs, cfg.first_layer, rng)
    router = store.add(f"{prefix}/router", rng.normal(0.0, 1.0 / np.sqrt(ts), size=(ts, p)))
    mixer = store.add(f"{prefix}/mixer", rng.normal(0.0, 1.0 / np.sqrt(ts), size=(ts, 1)))
    w_exp = store.add(f"{prefix}/expert/w", rng.normal(0.0, 1.0 / np.sqrt(ts), size=(p, ts, width)))
    b_exp = store.add(f"{prefix}/expert/b", np.zeros((p, width)))
    w_out, b_out = eg.init_affine(store, f"{prefix}/out", width, out_dim, rng)
    return HeadParams(w1, b1, router, mixer, w_exp, b_exp, w_out, b_out)


def tmoe_policy_forward(obs, head: HeadParams, cfg: RunConfig) -> eg.Tensor:
    """Observation batch (B, d_obs) (or a single row) to output logits."""
    x = eg.as_tensor(obs)
    single = x.data.ndim == 1
    if single:
        x = eg.reshape(x, (1, x.data.shape[0]))
    if x.data.shape[-1] != head.w1.data.shape[0]:
        raise ShapeError(f"observation width {x.data.shape[-1]} does not match head input "
                         f"{head.w1.data.shape[0]}")
    bsz = x.data.shape[0]
    tokens = eg.reshape(eg.affine(x, head.w1, head.b1, act="tanh"),
                        (bsz, cfg.tokens, cfg.token_size))
    logits = eg.matmul(tokens, head.router)                     # (B, B_t, P)
    dispatch = eg.softmax(logits, axis=1)                       # over tokens, per expert
    slots = eg.matmul(eg.transpose(dispatch, (0, 2, 1)), tokens)           # (B, P, ts)
    z = eg.matmul(eg.transpose(slots, (1, 0, 2)), head.w_exp)              # (P, B, width)
    y = eg.tanh(eg.transpose(z, (1, 0, 2)) + head.b_exp)
    combine = eg.softmax(logits, axis=2)                        # over experts, per token
    token_out = eg.matmul(combine, y)                           # (B, B_t, width)
    mix = eg.softmax(eg.reshape(eg.matmul(tokens, head.mixer), (bsz, cfg.tokens)), axis=1)
    mixed = eg.reshape(eg.matmul(eg.reshape(mix, (bsz, 1, cfg.tokens)), token_out),
                       (bsz, cfg.tmoe_out))
    out = eg.affine(mixed, head.w_out, head.b_out)
    return eg.reshape(out, (out.data.shape[-1],)) if single else out


def token_mix_weights(obs, head: HeadParams, cfg: RunConfig) -> np.ndarray:
    """The softmax token-mixture weights for inspection (B, tokens)."""
    x = eg.as_tensor(obs)
    if x.data.ndim == 1:
        x = eg.reshape(x, (1, x.data.shape[0]))
    with eg.no_grad():
        tokens = eg.reshape(eg.tanh(eg.affine(x, head.w1, head.b1)),
                            (x.data.shape[0], cfg.tokens, cfg.token_size))
        mix = eg.softmax(eg.reshape(eg.matmul(tokens, head.mixer),
                                    (x.data.shape[0], cfg.tokens)), axis=1)
    return mix.data


# ---------------------------------------------------------------------------
# advantage estimation and losses


@dataclass
class AdvantageEstimate:
    advantages: np.ndarray
    deltas: np.ndarray
    gamma: float
    lam: float


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float) -> AdvantageEstimate:
    """Generalized advantage estimation with zero terminal bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t = len(rewards)
    if values.shape != (t,) or dones.shape != (t,):
        raise ShapeError("rewards, values and dones must share one length")
    nxt = np.append(values[1:], 0.0)
    deltas = rewards + gamma * nxt * (1.0 - dones) - values
    adv = np.zeros(t)
    running = 0.0
    for i in range(t - 1, -1, -1):
        running = deltas[i] + gamma * lam * (1.0 - dones[i]) * running
        adv[i] = running
    return AdvantageEstimate(adv, deltas, gamma, lam)


def clipped_surrogate(ratio: eg.Tensor, advantage, epsilon: float) -> eg.Tensor:
    """Per-sample clipped objective: min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    adv = eg.as_tensor(advantage)
    return eg.minimum(ratio * adv, eg.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv)


def policy_loss(log_prob_new: eg.Tensor, log_prob_old, advantage,
                epsilon: float = 0.3) -> eg.Tensor:
    """Mean clipped surrogate (to be maximized)."""
    ratio = eg.exp(log_prob_new - eg.as_tensor(log_prob_old))
    return eg.tmean(clipped_surrogate(ratio, advantage, epsilon))


def value_loss(v_new: eg.Tensor, v_old, advantage) -> eg.Tensor:
    """Mean squared error against the advantage-corrected old values."""
    target = eg.as_tensor(np.asarray(advantage) + np.asarray(v_old))
    return eg.tmean(eg.square(v_new - target))


def entropy(logits: eg.Tensor) -> eg.Tensor:
    """Shannon entropy of the categorical policy, per row of logits."""
    logp = eg.log_softmax(eg.as_tensor(logits), axis=-1)
    return -eg.tsum(eg.exp(logp) * logp, axis=-1)


def action_log_probs(logits: eg.Tensor, actions: np.ndarray) -> eg.Tensor:
    """Log-probability of the chosen action per row."""
    logp = eg.log_softmax(logits, axis=-1)
    rows = np.arange(logp.data.shape[0])
    return eg.take(logp, (rows, np.asarray(actions, dtype=np.int64)))


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical sampling over the last axis (training-time behavior)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(p.shape[:-1] + (1,))
    return (p.cumsum(axis=-1) < u).sum(axis=-1)


def joint_objective(policy_term: eg.Tensor, value_term: eg.Tensor, entropy_term: eg.Tensor,
                    repr_term: eg.Tensor | None, iota: float, lambda_g: float) -> eg.Tensor:
    """Single minimized loss for the unified update.

    The decision part maximizes the clipped surrogate and the entropy bonus
    while minimizing the value regression; the representation regression is
    added with weight ``lambda_g``.
    """
    loss = -policy_term - iota * entropy_term + value_term
    if repr_term is not None:
        loss = loss + lambda_g * repr_term
    return loss
