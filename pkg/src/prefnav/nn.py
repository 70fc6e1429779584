"""Dense network stack in numpy: MLPs, reverse-mode gradients, Adam.

Three composite networks are built from the same parts:

* ``PolicyNet``  — two-stream encoder -> trunk -> 2 bounded actions.
* ``QNet``       — two-stream encoder -> [features, action] -> trunk -> scalar.
  Used both for TD3 critics and for the preference reward model.

Networks consume physical-unit observation vectors and scale them internally
(lidar / 6, distances / 10, angles / pi) so every caller passes the canonical
representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sim2d
from .storage import load_arrays, save_arrays

ENCODER_HIDDEN = 64
FEATURE_WIDTH = 2 * ENCODER_HIDDEN  # 128
POSE_INPUTS = 4
ACTION_DIM = 2

OBS_SCALE = np.concatenate(
    [
        np.full(sim2d.POOLED_RAYS, 1.0 / sim2d.LIDAR_RANGE),
        [0.1, 1.0 / math.pi, 0.1, 1.0 / math.pi],
    ]
)


def scale_observations(obs: np.ndarray) -> np.ndarray:
    """Normalize physical observation vectors for network input."""
    return np.asarray(obs, dtype=float) * OBS_SCALE


class Mlp:
    """Fully-connected stack with rectifier hidden units.

    ``output`` selects the last layer's activation: "linear", "bounded"
    (tanh, range exactly [-1, 1]) or "relu" (for feature-extractor use).
    """

    def __init__(
        self,
        widths: list[int],
        output: str = "linear",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if output not in ("linear", "bounded", "relu"):
            raise ValueError(f"unknown output activation {output!r}")
        self.widths = list(int(w) for w in widths)
        self.output = output
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out).astype(self.dtype))

    # -- evaluation ---------------------------------------------------------

    def _activate(self, z: np.ndarray, last: bool) -> np.ndarray:
        if not last or self.output == "relu":
            return np.maximum(z, 0.0)
        if self.output == "bounded":
            return np.tanh(z)
        return z

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.widths[0]:
            raise ValueError(
                f"input width {a.shape[1]} does not match first layer {self.widths[0]}"
            )
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = self._activate(a @ w + b, last=(i == n_layers - 1))
        return a[0] if squeeze else a

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass retaining (input, pre-activation) pairs for backward()."""
        a = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        cache = []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            cache.append((a, z))
            a = self._activate(z, last=(i == n_layers - 1))
        return a, cache

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Reverse-mode sweep; returns (parameter grads, grad wrt input).

        Parameter grads are ordered [w0, b0, w1, b1, ...] to line up with
        :meth:`params`.
        """
        g = np.atleast_2d(np.asarray(grad_out, dtype=self.dtype))
        n_layers = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * n_layers)  # type: ignore[list-item]
        for i in range(n_layers - 1, -1, -1):
            x, z = cache[i]
            last = i == n_layers - 1
            if not last or self.output == "relu":
                g = g * (z > 0.0)
            elif self.output == "bounded":
                g = g * (1.0 - np.tanh(z) ** 2)
            grads[2 * i] = x.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def gradients(self, x: np.ndarray, loss) -> tuple[float, list[np.ndarray]]:
        """Parameter gradients of a scalar loss over an input batch.

        ``loss(outputs)`` must return ``(value, grad_wrt_outputs)``.
        """
        out, cache = self.forward_cached(x)
        value, grad_out = loss(out)
        grads, _ = self.backward(cache, grad_out)
        return float(value), grads

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[2 * i].astype(self.dtype)
            self.biases[i] = params[2 * i + 1].astype(self.dtype)

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def clone(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.widths = list(self.widths)
        dup.output = self.output
        dup.dtype = self.dtype
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


class TwoStreamEncoder:
    """Separate feature extractors for the lidar block and the polar block."""

    def __init__(
        self,
        hidden: int = ENCODER_HIDDEN,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = rng if rng is not None else np.random.default_rng()
        self.hidden = hidden
        self.dtype = np.dtype(dtype)
        self.lidar = Mlp([sim2d.POOLED_RAYS, hidden, hidden], output="relu", rng=rng, dtype=dtype)
        self.pose = Mlp([POSE_INPUTS, hidden, hidden], output="relu", rng=rng, dtype=dtype)

    @property
    def feature_width(self) -> int:
        return 2 * self.hidden

    def forward_cached(self, obs_scaled: np.ndarray) -> tuple[np.ndarray, tuple]:
        lidar_feat, lidar_cache = self.lidar.forward_cached(obs_scaled[:, : sim2d.POOLED_RAYS])
        pose_feat, pose_cache = self.pose.forward_cached(obs_scaled[:, sim2d.POOLED_RAYS :])
        return np.concatenate([lidar_feat, pose_feat], axis=1), (lidar_cache, pose_cache)

    def backward(self, cache: tuple, grad_feat: np.ndarray) -> list[np.ndarray]:
        lidar_cache, pose_cache = cache
        lidar_grads, _ = self.lidar.backward(lidar_cache, grad_feat[:, : self.hidden])
        pose_grads, _ = self.pose.backward(pose_cache, grad_feat[:, self.hidden :])
        return lidar_grads + pose_grads

    def params(self) -> list[np.ndarray]:
        return self.lidar.params() + self.pose.params()

    def clone(self) -> "TwoStreamEncoder":
        dup = TwoStreamEncoder.__new__(TwoStreamEncoder)
        dup.hidden = self.hidden
        dup.dtype = self.dtype
        dup.lidar = self.lidar.clone()
        dup.pose = self.pose.clone()
        return dup


def _prep_obs(obs: np.ndarray, dtype) -> tuple[np.ndarray, bool]:
    obs = np.asarray(obs)
    squeeze = obs.ndim == 1
    scaled = np.atleast_2d(obs) * OBS_SCALE
    return scaled.astype(dtype, copy=False), squeeze


class PolicyNet:
    """Deterministic actor: observation -> normalized action in [-1, 1]^2."""

    def __init__(
        self,
        trunk_widths: tuple[int, ...] = (400, 300),
        encoder_hidden: int = ENCODER_HIDDEN,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = rng if rng is not None else np.random.default_rng()
        self.trunk_widths = tuple(trunk_widths)
        self.dtype = np.dtype(dtype)
        self.encoder = TwoStreamEncoder(encoder_hidden, rng=rng, dtype=dtype)
        self.trunk = Mlp(
            [self.encoder.feature_width, *trunk_widths, ACTION_DIM],
            output="bounded",
            rng=rng,
            dtype=dtype,
        )

    def forward(self, obs: np.ndarray) -> np.ndarray:
        scaled, squeeze = _prep_obs(obs, self.dtype)
        feat, _ = self.encoder.forward_cached(scaled)
        act = self.trunk.forward(feat)
        return act[0] if squeeze else act

    def forward_cached(self, obs: np.ndarray) -> tuple[np.ndarray, tuple]:
        scaled, _ = _prep_obs(obs, self.dtype)
        feat, enc_cache = self.encoder.forward_cached(scaled)
        act, trunk_cache = self.trunk.forward_cached(feat)
        return act, (enc_cache, trunk_cache)

    def backward(self, cache: tuple, grad_action: np.ndarray) -> list[np.ndarray]:
        enc_cache, trunk_cache = cache
        trunk_grads, grad_feat = self.trunk.backward(trunk_cache, grad_action)
        enc_grads = self.encoder.backward(enc_cache, grad_feat)
        return enc_grads + trunk_grads

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.trunk.params()

    def clone(self) -> "PolicyNet":
        dup = PolicyNet.__new__(PolicyNet)
        dup.trunk_widths = self.trunk_widths
        dup.dtype = self.dtype
        dup.encoder = self.encoder.clone()
        dup.trunk = self.trunk.clone()
        return dup

    def meta(self) -> dict:
        return {
            "kind": "policy",
            "trunk_widths": list(self.trunk_widths),
            "encoder_hidden": self.encoder.hidden,
            "dtype": self.dtype.name,
        }


class QNet:
    """Scalar head over (observation, action); critic and reward-model body."""

    def __init__(
        self,
        trunk_widths: tuple[int, ...] = (400, 300),
        encoder_hidden: int = ENCODER_HIDDEN,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = rng if rng is not None else np.random.default_rng()
        self.trunk_widths = tuple(trunk_widths)
        self.dtype = np.dtype(dtype)
        self.encoder = TwoStreamEncoder(encoder_hidden, rng=rng, dtype=dtype)
        self.trunk = Mlp(
            [self.encoder.feature_width + ACTION_DIM, *trunk_widths, 1],
            output="linear",
            rng=rng,
            dtype=dtype,
        )

    def forward(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        scaled, squeeze = _prep_obs(obs, self.dtype)
        action = np.atleast_2d(np.asarray(action, dtype=self.dtype))
        feat, _ = self.encoder.forward_cached(scaled)
        q = self.trunk.forward(np.concatenate([feat, action], axis=1))[:, 0]
        return float(q[0]) if squeeze else q

    def forward_cached(self, obs: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, tuple]:
        scaled, _ = _prep_obs(obs, self.dtype)
        action = np.atleast_2d(np.asarray(action, dtype=self.dtype))
        feat, enc_cache = self.encoder.forward_cached(scaled)
        q, trunk_cache = self.trunk.forward_cached(np.concatenate([feat, action], axis=1))
        return q[:, 0], (enc_cache, trunk_cache)

    def backward(self, cache: tuple, grad_q: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns (parameter grads, grad wrt the action input)."""
        enc_cache, trunk_cache = cache
        grad_q = np.asarray(grad_q, dtype=float).reshape(-1, 1)
        trunk_grads, grad_in = self.trunk.backward(trunk_cache, grad_q)
        feat_width = self.encoder.feature_width
        enc_grads = self.encoder.backward(enc_cache, grad_in[:, :feat_width])
        return enc_grads + trunk_grads, grad_in[:, feat_width:]

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.trunk.params()

    def clone(self) -> "QNet":
        dup = QNet.__new__(QNet)
        dup.trunk_widths = self.trunk_widths
        dup.dtype = self.dtype
        dup.encoder = self.encoder.clone()
        dup.trunk = self.trunk.clone()
        return dup

    def meta(self) -> dict:
        return {
            "kind": "q",
            "trunk_widths": list(self.trunk_widths),
            "encoder_hidden": self.encoder.hidden,
            "dtype": self.dtype.name,
        }


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, lazily shaped on first use."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list[np.ndarray]:
    """One bias-corrected moment update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    correct1 = 1.0 - beta1**state.step
    correct2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)
    return params


# -- persistence --------------------------------------------------------------

def net_arrays(net: PolicyNet | QNet, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for branch_name, branch in (("lidar", net.encoder.lidar), ("pose", net.encoder.pose), ("trunk", net.trunk)):
        for i, (w, b) in enumerate(zip(branch.weights, branch.biases)):
            out[f"{prefix}{branch_name}.w{i}"] = w
            out[f"{prefix}{branch_name}.b{i}"] = b
    return out


def set_net_arrays(net: PolicyNet | QNet, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    for branch_name, branch in (("lidar", net.encoder.lidar), ("pose", net.encoder.pose), ("trunk", net.trunk)):
        for i in range(len(branch.weights)):
            branch.weights[i] = np.array(arrays[f"{prefix}{branch_name}.w{i}"], dtype=branch.dtype)
            branch.biases[i] = np.array(arrays[f"{prefix}{branch_name}.b{i}"], dtype=branch.dtype)


def build_net(meta: dict, rng: np.random.Generator | None = None) -> PolicyNet | QNet:
    cls = PolicyNet if meta["kind"] == "policy" else QNet
    return cls(
        trunk_widths=tuple(meta["trunk_widths"]),
        encoder_hidden=meta["encoder_hidden"],
        rng=rng if rng is not None else np.random.default_rng(0),
        dtype=np.dtype(meta.get("dtype", "float64")),
    )


def save_net(path, net: PolicyNet | QNet, extra_meta: dict | None = None) -> None:
    meta = net.meta()
    if extra_meta:
        meta.update(extra_meta)
    save_arrays(path, net_arrays(net), meta)


def load_net(path) -> tuple[PolicyNet | QNet, dict]:
    arrays, meta = load_arrays(path)
    net = build_net(meta)
    set_net_arrays(net, arrays)
    return net, meta
