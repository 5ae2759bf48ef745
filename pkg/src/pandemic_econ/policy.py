"""Log-linear softmax policies with shared weights and per-actor biases.

Actions are 0-based indices here; the environment maps index ``j`` to level
``j + 1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import xlogy

CHECKPOINT_FORMAT = "pandemic-econ-policy"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    """Weights ``W`` (features x actions) and biases ``b`` (actors x actions)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.ndim != 2 or self.W.shape[1] != self.b.shape[1]:
            raise ValueError(f"incompatible shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def zeros(cls, feature_dim: int, action_dim: int, actor_count: int = 1) -> "PolicyParams":
        return cls(np.zeros((feature_dim, action_dim)), np.zeros((actor_count, action_dim)))

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def action_dim(self) -> int:
        return self.W.shape[1]

    @property
    def actor_count(self) -> int:
        return self.b.shape[0]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.W.copy(), self.b.copy())

    def to_dict(self) -> dict:
        return {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in (("W", self.W), ("b", self.b))}

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        arrays = {}
        for name in ("W", "b"):
            shape = tuple(data[name]["shape"])
            values = np.asarray(data[name]["data"], dtype=float)
            if values.size != int(np.prod(shape)):
                raise ValueError(f"{name}: {values.size} values do not fill shape {shape}")
            arrays[name] = values.reshape(shape)
        return cls(**arrays)


def logits(obs, params: PolicyParams, actor):
    return np.asarray(obs, dtype=float) @ params.W + params.b[actor]


def softmax(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite policy logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def action_distribution(obs, params: PolicyParams, actor=0):
    """Action probabilities for observation(s) ``obs`` of the given actor(s)."""
    return softmax(logits(obs, params, actor))


def sample(dist, rng: np.random.Generator):
    """One categorical draw per leading index of ``dist``."""
    dist = np.asarray(dist, dtype=float)
    cdf = np.cumsum(dist, axis=-1)
    u = rng.random(dist.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = np.sum(cdf <= u, axis=-1)
    return np.minimum(idx, dist.shape[-1] - 1)


def entropy(dist):
    return -np.sum(xlogy(dist, dist), axis=-1)


def entropy_logit_grad(dist):
    """Gradient of the entropy with respect to the logits."""
    dist = np.asarray(dist, dtype=float)
    return -(xlogy(dist, dist) + dist * entropy(dist)[..., None])


def log_prob_logit_grad(dist, action):
    onehot = np.zeros_like(dist)
    np.put_along_axis(onehot, np.asarray(action)[..., None], 1.0, axis=-1)
    return onehot - dist


def log_prob_grad(obs, action: int, params: PolicyParams, actor: int = 0):
    """Gradient of ``log pi(action | obs)`` with respect to ``W`` and ``b``."""
    obs = np.asarray(obs, dtype=float)
    g = log_prob_logit_grad(action_distribution(obs, params, actor), action)
    grad_b = np.zeros_like(params.b)
    grad_b[actor] = g
    return np.outer(obs, g), grad_b


def entropy_grad(obs, params: PolicyParams, actor: int = 0):
    """Gradient of the policy entropy at ``obs`` with respect to ``W`` and ``b``."""
    obs = np.asarray(obs, dtype=float)
    g = entropy_logit_grad(action_distribution(obs, params, actor))
    grad_b = np.zeros_like(params.b)
    grad_b[actor] = g
    return np.outer(obs, g), grad_b


def accumulate_gradients(obs, logit_grads, actors, params: PolicyParams):
    """Sum per-sample logit gradients into ``W`` and per-actor ``b`` rows.

    ``obs`` is (M, F), ``logit_grads`` (M, A) and ``actors`` (M,). Summation
    order is fixed by the sample order.
    """
    grad_W = obs.T @ logit_grads
    grad_b = np.zeros_like(params.b)
    np.add.at(grad_b, np.asarray(actors), logit_grads)
    return grad_W, grad_b


def save_checkpoint(path, agent: PolicyParams, planner: PolicyParams, metadata: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "agent": agent.to_dict(),
        "planner": planner.to_dict(),
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[PolicyParams, PolicyParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return PolicyParams.from_dict(doc["agent"]), PolicyParams.from_dict(doc["planner"]), doc.get("metadata", {})
