"""Shared Gaussian policy and value networks with a Deep-Sets neighbour encoder.

Each of the two networks (``pi`` and ``vf``) has the same wiring:

    trunk   : MLP over [proprio, rays?]           -> h
    psi     : MLP applied to every neighbour row  -> summed over neighbours -> s
    phi     : MLP over s                          -> e
    head    : linear over [h, e?]                 -> 2 means (pi) or 1 value (vf)

Blocks that the perception mode does not produce are left out entirely.
Gradients are computed by hand in reverse mode; everything is float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .perception import NEIGHBOR_FEATURES, PROPRIO_SIZE, ObservationBatch, Observation, PerceptionConfig

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
ACTION_DIM = 2
CHECKPOINT_FORMAT = "crowdrl.policy/1"
_LOG_2PI = math.log(2.0 * math.pi)


def _tanh_grad(a):
    return 1.0 - a * a


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(a):
    return (a > 0.0).astype(float)


_ACTIVATIONS = {"tanh": (np.tanh, _tanh_grad), "relu": (_relu, _relu_grad)}


@dataclass(frozen=True)
class Architecture:
    proprio_size: int = PROPRIO_SIZE
    ray_size: int = 0
    use_neighbors: bool = True
    neighbor_features: int = NEIGHBOR_FEATURES
    trunk: tuple = (64, 64)
    psi: tuple = (64,)
    phi: tuple = (64,)
    activation: str = "tanh"
    proprio_scale: tuple = ()
    neighbor_scale: tuple = ()

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("trunk", "psi", "phi"):
            widths = tuple(int(w) for w in getattr(self, name))
            if not widths:
                raise ValueError(f"{name} needs at least one layer")
            object.__setattr__(self, name, widths)
        if not self.proprio_scale:
            object.__setattr__(self, "proprio_scale", (1.0,) * self.proprio_size)
        if not self.neighbor_scale:
            object.__setattr__(self, "neighbor_scale", (1.0,) * self.neighbor_features)
        object.__setattr__(self, "proprio_scale", tuple(float(x) for x in self.proprio_scale))
        object.__setattr__(self, "neighbor_scale", tuple(float(x) for x in self.neighbor_scale))

    @classmethod
    def for_perception(cls, perception: PerceptionConfig, v_max: float = 2.0,
                       trunk=(64, 64), psi=(64,), phi=(64,), activation="tanh") -> "Architecture":
        """Positions are scaled by 1/10 m and velocities by 1/v_max on input."""
        pos, vel = 0.1, 1.0 / v_max
        return cls(
            ray_size=perception.ray_size,
            use_neighbors=perception.mode.uses_neighbors,
            trunk=tuple(trunk), psi=tuple(psi), phi=tuple(phi), activation=activation,
            proprio_scale=(pos,) * 4 + (1.0, 1.0) + (vel,) * 2,
            neighbor_scale=(pos, pos, vel, vel, pos),
        )

    @property
    def variant(self) -> str:
        if self.use_neighbors and self.ray_size:
            return "hybrid"
        return "agent_perception" if self.use_neighbors else "raycast"

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for net, out_dim in (("pi", ACTION_DIM), ("vf", 1)):
            sizes = [self.proprio_size + self.ray_size, *self.trunk]
            for l in range(len(self.trunk)):
                shapes[f"{net}.trunk.{l}.w"] = (sizes[l], sizes[l + 1])
                shapes[f"{net}.trunk.{l}.b"] = (sizes[l + 1],)
            head_in = self.trunk[-1]
            if self.use_neighbors:
                sizes = [self.neighbor_features, *self.psi]
                for l in range(len(self.psi)):
                    shapes[f"{net}.psi.{l}.w"] = (sizes[l], sizes[l + 1])
                    shapes[f"{net}.psi.{l}.b"] = (sizes[l + 1],)
                sizes = [self.psi[-1], *self.phi]
                for l in range(len(self.phi)):
                    shapes[f"{net}.phi.{l}.w"] = (sizes[l], sizes[l + 1])
                    shapes[f"{net}.phi.{l}.b"] = (sizes[l + 1],)
                head_in += self.phi[-1]
            shapes[f"{net}.head.w"] = (head_in, out_dim)
            shapes[f"{net}.head.b"] = (out_dim,)
        shapes["pi.log_std"] = (ACTION_DIM,)
        return shapes


def _orthogonal(rng, fan_in, fan_out, gain):
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_params(arch: Architecture, seed: int = 0) -> dict[str, np.ndarray]:
    """Orthogonal init (gain sqrt 2) for hidden layers, zero biases.

    The action head is scaled by 0.01 so the fresh policy has near-zero mean;
    the value head uses gain 1 and log std starts at 0.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name == "pi.log_std" or name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        gain = math.sqrt(2.0)
        if name == "pi.head.w":
            gain = 0.01
        elif name == "vf.head.w":
            gain = 1.0
        params[name] = _orthogonal(rng, shape[0], shape[1], gain)
    return params


@dataclass
class PolicyOutput:
    action_mean: np.ndarray  # (B, 2)
    action_std: np.ndarray  # (2,)
    value: np.ndarray  # (B,)

    @property
    def log_std(self) -> np.ndarray:
        return np.log(self.action_std)


def log_prob_and_entropy(mean, std, action):
    """Diagonal-Gaussian log density of ``action`` and the (per-sample) entropy."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    action = np.asarray(action, dtype=float)
    if np.any(std <= 0):
        raise ValueError("standard deviations must be positive")
    z = (action - mean) / std
    log_std = np.log(std)
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)
    entropy = float(np.sum(0.5 * (_LOG_2PI + 1.0) + log_std))
    return logp, entropy


@dataclass
class PPOLoss:
    """Clipped-surrogate objective with value regression and an entropy bonus."""

    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    policy_coef: float = 1.0


@dataclass
class TrainBatch:
    obs: ObservationBatch
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.actions.shape[0]

    def take(self, idx) -> "TrainBatch":
        return TrainBatch(self.obs.take(idx), self.actions[idx], self.old_log_probs[idx],
                          self.advantages[idx], self.returns[idx])


class ActorCritic:
    """Parameter container plus forward/backward passes for both networks."""

    def __init__(self, arch: Architecture, params: dict | None = None, seed: int = 0):
        self.arch = arch
        self.params = init_params(arch, seed) if params is None else params
        expected = arch.param_shapes()
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match the architecture")
        for k, shape in expected.items():
            if tuple(self.params[k].shape) != tuple(shape):
                raise ValueError(f"{k}: expected shape {shape}, got {self.params[k].shape}")
        self._act, self._act_grad = _ACTIVATIONS[arch.activation]
        self._pscale = np.array(arch.proprio_scale)
        self._nscale = np.array(arch.neighbor_scale)

    # -- layout --------------------------------------------------------------

    def check_layout(self, obs: ObservationBatch):
        arch = self.arch
        if obs.proprio.shape[1] != arch.proprio_size:
            raise ValueError(f"proprio width {obs.proprio.shape[1]} != {arch.proprio_size}")
        rays = 0 if obs.rays is None else obs.rays.shape[1]
        if rays != arch.ray_size:
            raise ValueError(f"observation has {rays} ray values, network expects {arch.ray_size}")
        if (obs.neighbors is not None) != arch.use_neighbors:
            raise ValueError(
                "observation neighbour block does not match the network "
                f"({arch.variant} network)"
            )

    # -- forward -------------------------------------------------------------

    def _mlp(self, params, prefix, x, n_layers):
        cache = []
        for l in range(n_layers):
            a = self._act(x @ params[f"{prefix}.{l}.w"] + params[f"{prefix}.{l}.b"])
            cache.append((x, a))
            x = a
        return x, cache

    def _mlp_back(self, params, prefix, cache, g, grads):
        for l in reversed(range(len(cache))):
            x, a = cache[l]
            gz = g * self._act_grad(a)
            grads[f"{prefix}.{l}.w"] += x.T @ gz
            grads[f"{prefix}.{l}.b"] += gz.sum(axis=0)
            g = gz @ params[f"{prefix}.{l}.w"].T
        return g

    def _embed(self, params, net, neighbors, mask):
        B, K, F = neighbors.shape
        x = (neighbors * self._nscale).reshape(B * K, F)
        psi_out, psi_cache = self._mlp(params, f"{net}.psi", x, len(self.arch.psi))
        H = psi_out.shape[1]
        summed = (psi_out.reshape(B, K, H) * mask[:, :, None]).sum(axis=1)
        emb, phi_cache = self._mlp(params, f"{net}.phi", summed, len(self.arch.phi))
        return emb, (psi_cache, phi_cache, mask, B, K, H)

    def _net_forward(self, params, net, obs: ObservationBatch, mask):
        x = obs.proprio * self._pscale
        if obs.rays is not None:
            x = np.concatenate([x, obs.rays], axis=1)
        h, trunk_cache = self._mlp(params, f"{net}.trunk", x, len(self.arch.trunk))
        emb_cache = None
        if self.arch.use_neighbors:
            emb, emb_cache = self._embed(params, net, obs.neighbors, mask)
            h = np.concatenate([h, emb], axis=1)
        out = h @ params[f"{net}.head.w"] + params[f"{net}.head.b"]
        return out, (trunk_cache, emb_cache, h)

    def _net_backward(self, params, net, cache, g_out, grads):
        trunk_cache, emb_cache, h = cache
        grads[f"{net}.head.w"] += h.T @ g_out
        grads[f"{net}.head.b"] += g_out.sum(axis=0)
        g_h = g_out @ params[f"{net}.head.w"].T
        width = self.arch.trunk[-1]
        if emb_cache is not None:
            psi_cache, phi_cache, mask, B, K, H = emb_cache
            g_sum = self._mlp_back(params, f"{net}.phi", phi_cache, g_h[:, width:], grads)
            g_psi = (g_sum[:, None, :] * mask[:, :, None]).reshape(B * K, H)
            self._mlp_back(params, f"{net}.psi", psi_cache, g_psi, grads)
        self._mlp_back(params, f"{net}.trunk", trunk_cache, g_h[:, :width], grads)

    @staticmethod
    def _mask(obs: ObservationBatch):
        if obs.neighbors is None:
            return None
        K = obs.neighbors.shape[1]
        return (np.arange(K)[None, :] < obs.counts[:, None]).astype(float)

    def _forward(self, params, obs: ObservationBatch):
        self.check_layout(obs)
        mask = self._mask(obs)
        mean, pi_cache = self._net_forward(params, "pi", obs, mask)
        value, vf_cache = self._net_forward(params, "vf", obs, mask)
        raw = params["pi.log_std"]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, value[:, 0], (pi_cache, vf_cache, raw)

    def forward(self, obs, params=None) -> PolicyOutput:
        """Evaluate a single :class:`Observation` or an :class:`ObservationBatch`."""
        params = self.params if params is None else params
        if isinstance(obs, Observation):
            if (obs.neighbors is not None) != self.arch.use_neighbors:
                raise ValueError(f"observation layout does not match the {self.arch.variant} network")
            k = 0 if obs.neighbors is None else max(1, obs.neighbors.shape[0])
            obs = ObservationBatch.from_observations([obs], k)
        mean, log_std, value, _ = self._forward(params, obs)
        return PolicyOutput(mean, np.exp(log_std), value)

    def embed_neighbors(self, neighbors, net: str = "pi") -> np.ndarray:
        """phi(sum_i psi(x_i)) for one neighbour list; the empty sum is the zero vector."""
        if not self.arch.use_neighbors:
            raise ValueError("this network has no neighbour encoder")
        neighbors = np.asarray(neighbors, dtype=float).reshape(-1, self.arch.neighbor_features)
        k = neighbors.shape[0]
        padded = np.zeros((1, max(k, 1), self.arch.neighbor_features))
        padded[0, :k] = neighbors
        mask = np.zeros((1, max(k, 1)))
        mask[0, :k] = 1.0
        emb, _ = self._embed(self.params, net, padded, mask)
        return emb[0]

    # -- loss and gradients --------------------------------------------------

    def backward(self, cache, d_mean, d_log_std, d_value, params=None) -> dict[str, np.ndarray]:
        """Reverse pass given gradients w.r.t. the three outputs of ``_forward``."""
        params = self.params if params is None else params
        pi_cache, vf_cache, raw = cache
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        self._net_backward(params, "pi", pi_cache, d_mean, grads)
        self._net_backward(params, "vf", vf_cache, np.asarray(d_value)[:, None], grads)
        inside = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
        grads["pi.log_std"] += np.where(inside, d_log_std, 0.0)
        return grads

    def loss_and_grad(self, batch: TrainBatch, spec: PPOLoss, params=None):
        """Mean PPO loss over ``batch``, its exact gradient and diagnostics."""
        params = self.params if params is None else params
        mean, log_std, value, cache = self._forward(params, batch.obs)
        n = len(batch)
        std = np.exp(log_std)
        diff = batch.actions - mean
        z = diff / std
        logp = np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=1)
        entropy = float(np.sum(0.5 * (_LOG_2PI + 1.0) + log_std))
        log_ratio = logp - batch.old_log_probs
        ratio = np.exp(log_ratio)
        adv = batch.advantages
        surr1 = ratio * adv
        surr2 = np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
        policy_loss = -np.mean(np.minimum(surr1, surr2))
        v_err = value - batch.returns
        value_loss = np.mean(v_err * v_err)
        loss = spec.policy_coef * policy_loss + spec.value_coef * value_loss - spec.entropy_coef * entropy

        # Only the unclipped branch carries gradient; where the clipped one is
        # the minimum its ratio is constant.
        d_logp = np.where(surr1 <= surr2, -spec.policy_coef * surr1 / n, 0.0)
        d_mean = d_logp[:, None] * diff / (std * std)
        d_log_std = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0) - spec.entropy_coef
        d_value = spec.value_coef * 2.0 * v_err / n
        grads = self.backward(cache, d_mean, d_log_std, d_value, params)
        stats = {
            "loss": float(loss),
            "policy_loss": float(policy_loss),
            "value_loss": float(value_loss),
            "entropy": entropy,
            "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > spec.clip_eps)),
        }
        return float(loss), grads, stats

    # -- acting --------------------------------------------------------------

    def act(self, obs: ObservationBatch, rng=None, mode: str = "sample"):
        """Actions (unclipped), their log-probs and the value estimates."""
        mean, log_std, value, _ = self._forward(self.params, obs)
        std = np.exp(log_std)
        if mode == "mean":
            actions = mean.copy()
        elif mode == "sample":
            actions = mean + std * rng.standard_normal(mean.shape)
        else:
            raise ValueError(f"unknown action mode {mode!r}")
        logp, _ = log_prob_and_entropy(mean, std, actions)
        return actions, logp, value

    def value(self, obs: ObservationBatch) -> np.ndarray:
        self.check_layout(obs)
        out, _ = self._net_forward(self.params, "vf", obs, self._mask(obs))
        return out[:, 0]

    # -- persistence ---------------------------------------------------------

    def to_dict(self, meta: dict | None = None) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "arch": asdict(self.arch),
            "params": {
                k: {"shape": list(v.shape), "values": v.ravel(order="C").tolist()}
                for k, v in sorted(self.params.items())
            },
            "meta": meta or {},
        }

    def save(self, path, meta: dict | None = None):
        Path(path).write_text(json.dumps(self.to_dict(meta)))

    @classmethod
    def from_dict(cls, data: dict) -> "ActorCritic":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {data.get('format')!r}")
        arch = Architecture(**data["arch"])
        params = {
            k: np.array(v["values"], dtype=float).reshape(v["shape"]) for k, v in data["params"].items()
        }
        return cls(arch, params)

    @classmethod
    def load(cls, path) -> tuple["ActorCritic", dict]:
        data = json.loads(Path(path).read_text())
        return cls.from_dict(data), data.get("meta", {})
