"""Central finite differences for checking the analytic policy gradients."""
from __future__ import annotations

import numpy as np

from . import policy as pol
from .policy import PolicyParams


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` (any shape) by central differences."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up = f(x)
        flat[k] = orig - eps
        down = f(x)
        flat[k] = orig
        g[k] = (up - down) / (2.0 * eps)
    return grad


def _log_prob(obs, action, W, b, actor):
    return float(np.log(pol.action_distribution(obs, PolicyParams(W, b), actor)[action]))


def _entropy(obs, W, b, actor):
    return float(pol.entropy(pol.action_distribution(obs, PolicyParams(W, b), actor)))


def random_instance(rng: np.random.Generator, max_features: int = 8, max_actions: int = 20,
                    max_actors: int = 4, scale: float = 1.0):
    f = int(rng.integers(1, max_features + 1))
    a = int(rng.integers(2, max_actions + 1))
    m = int(rng.integers(1, max_actors + 1))
    params = PolicyParams(scale * rng.normal(size=(f, a)), scale * rng.normal(size=(m, a)))
    obs = rng.normal(size=f)
    return obs, params, int(rng.integers(m)), int(rng.integers(a))


def gradient_errors(obs, params: PolicyParams, actor: int, action: int, eps: float = 1e-5) -> dict[str, float]:
    """Max absolute analytic-vs-numeric error for the log-probability and entropy gradients."""
    gW, gb = pol.log_prob_grad(obs, action, params, actor)
    nW = central_difference(lambda W: _log_prob(obs, action, W, params.b, actor), params.W, eps)
    nb = central_difference(lambda b: _log_prob(obs, action, params.W, b, actor), params.b, eps)
    eW, eb = pol.entropy_grad(obs, params, actor)
    mW = central_difference(lambda W: _entropy(obs, W, params.b, actor), params.W, eps)
    mb = central_difference(lambda b: _entropy(obs, params.W, b, actor), params.b, eps)
    return {
        "log_prob": float(max(np.max(np.abs(gW - nW)), np.max(np.abs(gb - nb)))),
        "entropy": float(max(np.max(np.abs(eW - mW)), np.max(np.abs(eb - mb)))),
    }
