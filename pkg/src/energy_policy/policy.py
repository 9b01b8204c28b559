"""One-shot trajectory policy: a ReLU MLP with tanh outputs, in numpy.

With the ``sincos`` encoding each joint angle is emitted as a pair
``(sin, cos)``; ``direct`` emits angles as ``direct_scale * tanh(z)``.
Weights are stored as ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "ENERGY-POLICY-CKPT"
CHECKPOINT_VERSION = 1
DEGENERATE_NORM = 1e-6


class CheckpointError(ValueError):
    pass


@dataclass
class PolicyNet:
    weights: list
    biases: list
    encoding: str = "sincos"
    input_offset: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    direct_scale: float = np.pi

    def __post_init__(self):
        if self.encoding not in ("sincos", "direct"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError("bias size does not match layer width")
        for W0, W1 in zip(self.weights, self.weights[1:]):
            if W0.shape[1] != W1.shape[0]:
                raise ValueError("consecutive layer sizes do not chain")
        d = self.input_dim
        self.input_offset = (np.zeros(d) if self.input_offset is None
                             else np.asarray(self.input_offset, dtype=float))
        self.input_scale = (np.ones(d) if self.input_scale is None
                            else np.asarray(self.input_scale, dtype=float))
        if self.encoding == "sincos" and self.out_dim % 2:
            raise ValueError("sincos encoding needs an even output size")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def action_dim(self) -> int:
        return self.out_dim // 2 if self.encoding == "sincos" else self.out_dim

    @property
    def params(self) -> list:
        """Parameters in canonical order ``W0, b0, W1, b1, ...`` (live views)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "PolicyNet":
        return copy.deepcopy(self)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.params])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        i = 0
        for x in self.params:
            x[...] = flat[i:i + x.size].reshape(x.shape)
            i += x.size
        if i != flat.size:
            raise ValueError("flat parameter vector has the wrong size")


def init_policy(input_dim: int, action_dim: int, hidden=(512, 512), encoding="sincos",
                rng=None, input_offset=None, input_scale=None,
                direct_scale=np.pi) -> PolicyNet:
    """Fan-in scaled uniform initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(rng)
    out_dim = 2 * action_dim if encoding == "sincos" else action_dim
    sizes = [input_dim, *hidden, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return PolicyNet(weights, biases, encoding, input_offset, input_scale, direct_scale)


def _forward_cache(net: PolicyNet, P):
    x = (np.atleast_2d(np.asarray(P, dtype=float)) - net.input_offset) / net.input_scale
    if x.shape[1] != net.input_dim:
        raise ValueError(f"policy expects {net.input_dim} inputs, got {x.shape[1]}")
    acts = [x]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ W + b
        acts.append(np.tanh(z) if i == last else np.maximum(z, 0.0))
    return acts


def policy_forward(net: PolicyNet, P) -> np.ndarray:
    """Raw network output (encoded), shape (M, out_dim) or (out_dim,)."""
    single = np.asarray(P).ndim == 1
    y = _forward_cache(net, P)[-1]
    if net.encoding == "direct":
        y = net.direct_scale * y
    return y[0] if single else y


def encode_angles(q) -> np.ndarray:
    """Interleave ``(sin q_i, cos q_i)`` for every angle."""
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape[:-1] + (2 * q.shape[-1],)) if q.ndim else np.empty(2)
    out[..., 0::2] = np.sin(q)
    out[..., 1::2] = np.cos(q)
    return out


def decode_angles(enc, return_flags=False):
    """``atan2(s, c)`` per pair; pairs with norm < 1e-6 decode to 0 and are flagged."""
    enc = np.asarray(enc, dtype=float)
    s = enc[..., 0::2]
    c = enc[..., 1::2]
    degenerate = np.hypot(s, c) < DEGENERATE_NORM
    q = np.where(degenerate, 0.0, np.arctan2(s, c))
    if return_flags:
        return q, degenerate
    return q


def policy_actions(net: PolicyNet, P) -> np.ndarray:
    """Decoded action trajectory for input(s) ``P``."""
    y = policy_forward(net, P)
    return decode_angles(y) if net.encoding == "sincos" else y


def actions_to_targets(net: PolicyNet, A) -> np.ndarray:
    """Express action trajectories in the network's output space."""
    return encode_angles(A) if net.encoding == "sincos" else np.asarray(A, dtype=float)


def supervised_grad(net: PolicyNet, P, T, W=None):
    """Loss ``1/M sum 1/2 (y - T)^T W (y - T)`` and its exact gradient.

    ``T`` is in output space (encoded for ``sincos``). ``W`` is an optional
    stack of per-sample symmetric weight matrices, supported for ``direct``
    only. Returns ``(loss, grads)`` with ``grads`` in :attr:`PolicyNet.params`
    order.
    """
    if W is not None and net.encoding != "direct":
        raise ValueError("weighted loss is only supported with the direct encoding")
    acts = _forward_cache(net, P)
    T = np.atleast_2d(np.asarray(T, dtype=float))
    M = len(T)
    out = acts[-1]
    scale = net.direct_scale if net.encoding == "direct" else 1.0
    resid = scale * out - T
    if W is None:
        wr = resid
    else:
        wr = np.einsum("mij,mj->mi", np.asarray(W, dtype=float), resid)
    loss = 0.5 * float(np.sum(resid * wr)) / M
    return loss, _backprop(net, acts, wr / M)


def _backprop(net: PolicyNet, acts, dL_dy):
    """Parameter gradients given the loss gradient w.r.t. the scaled output."""
    out = acts[-1]
    scale = net.direct_scale if net.encoding == "direct" else 1.0
    delta = dL_dy * scale * (1.0 - out**2)
    grads = []
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append((acts[i].T @ delta, delta.sum(0)))
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    flat = []
    for gW, gb in reversed(grads):
        flat += [gW, gb]
    return flat


def energy_grad_theta(net: PolicyNet, P, dE_dA):
    """Chain rule ``(1/M) sum_m dE/da^m  da^m/dtheta`` for the direct encoding."""
    if net.encoding != "direct":
        raise ValueError("direct parameter-space gradient needs the direct encoding")
    acts = _forward_cache(net, P)
    return _backprop(net, acts, np.asarray(dE_dA, dtype=float) / len(acts[-1]))


# ---------------------------------------------------------------------------
# optimisers
# ---------------------------------------------------------------------------

@dataclass
class PlainGD:
    lr: float = 1e-3

    def step(self, net: PolicyNet, grads) -> None:
        for x, g in zip(net.params, grads):
            x -= self.lr * g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: PolicyNet, grads) -> None:
        if not self.m:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for x, g, m, v in zip(net.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            x -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "plain_gd":
        return PlainGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def apply_update(net: PolicyNet, grads, lr=None, optimizer=None) -> PolicyNet:
    """Update ``net`` in place and return it.

    Without an optimiser object this is a plain step ``theta - lr * g``.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite parameter gradient")
    if optimizer is None:
        if lr is None or lr < 0:
            raise ValueError("plain update needs a non-negative learning rate")
        optimizer = PlainGD(lr)
    optimizer.step(net, grads)
    return net


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_dict(net: PolicyNet) -> dict:
    return {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "encoding": net.encoding,
        "layer_sizes": net.layer_sizes,
        "direct_scale": net.direct_scale,
        "input_offset": net.input_offset.tolist(),
        "input_scale": net.input_scale.tolist(),
        "weights": [W.ravel().tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def save_policy(net: PolicyNet, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(net)))


def policy_from_dict(d: dict) -> PolicyNet:
    if not isinstance(d, dict) or d.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a policy checkpoint (bad magic)")
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    try:
        sizes = [int(s) for s in d["layer_sizes"]]
        weights = [np.asarray(w, dtype=float).reshape(a, b)
                   for w, a, b in zip(d["weights"], sizes[:-1], sizes[1:])]
        biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
            raise CheckpointError("layer count does not match layer_sizes")
        return PolicyNet(weights, biases, d["encoding"], d["input_offset"],
                         d["input_scale"], float(d["direct_scale"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def load_policy(path) -> PolicyNet:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return policy_from_dict(d)
