"""Feed-forward network machinery: fixed MLPs with hand-written reverse-mode
gradients, the conditional score network, the learned mixture-weight schedule,
and an adaptive-moment optimizer. No autodiff framework; gradients are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import simulators
from .errors import DivergenceError
from .sde import NoiseSchedule
from .serialize import dumps17
from .simulators import SimulatorSpec

CHECKPOINT_SCHEMA = 1
N_FOURIER = 4  # sin/cos pairs in the time embedding
TIME_FEATURES = 2 * N_FOURIER + 1

_ACT = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),  # derivative from the activation value
    "identity": (lambda v: v, lambda a: np.ones_like(a)),
}


@dataclass
class Mlp:
    """Plain MLP: weights[i] is (fan_in, fan_out), activations[i] names the
    nonlinearity applied after layer i."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must have equal length")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError(f"layer {i} output dim != layer {i + 1} input dim")
        for act in self.activations:
            if act not in _ACT:
                raise ValueError(f"unknown activation '{act}'")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...]; views, not copies."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(sizes, rng: np.random.Generator, zero_final: bool = False) -> Mlp:
    """Hidden layers tanh, final layer linear. zero_final=True zero-initializes
    the last layer so the net starts as the zero function (stable early steps)."""
    weights, biases, acts = [], [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == len(sizes) - 2
        if last and zero_final:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
        acts.append("identity" if last else "tanh")
    return Mlp(weights, biases, acts)


def mlp_forward(mlp: Mlp, x):
    """Apply the MLP. x is (in_dim,) or (n, in_dim); returns (output, cache)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != mlp.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != expected {mlp.in_dim}")
    layer_inputs, layer_outputs = [], []
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        layer_inputs.append(h)
        h = _ACT[act][0](h @ w + b)
        layer_outputs.append(h)
    out = h[0] if single else h
    return out, (layer_inputs, layer_outputs, single)


def mlp_backward(mlp: Mlp, cache, upstream):
    """Exact gradients of sum_i upstream_i . output_i.

    Returns (grads, dx) with grads flat as [dW0, db0, dW1, db1, ...] matching
    Mlp.params() order.
    """
    layer_inputs, layer_outputs, single = cache
    up = np.asarray(upstream, dtype=float)
    if single:
        up = up[None, :]
    if up.shape != layer_outputs[-1].shape:
        raise ValueError(f"upstream shape {up.shape} != output shape {layer_outputs[-1].shape}")
    grads = [None] * (2 * len(mlp.weights))
    for i in range(len(mlp.weights) - 1, -1, -1):
        dpre = up * _ACT[mlp.activations[i]][1](layer_outputs[i])
        grads[2 * i] = layer_inputs[i].T @ dpre
        grads[2 * i + 1] = dpre.sum(axis=0)
        up = dpre @ mlp.weights[i].T
    dx = up[0] if single else up
    return grads, dx


def time_features(t):
    """[sin(2 pi k t), cos(2 pi k t) for k=1..4, t] as (n, 9) (or (9,) for scalar t)."""
    t = np.asarray(t, dtype=float)
    single = t.ndim == 0
    tt = np.atleast_1d(t)[:, None]
    k = np.arange(1, N_FOURIER + 1)[None, :]
    feats = np.concatenate([np.sin(2 * np.pi * k * tt), np.cos(2 * np.pi * k * tt), tt], axis=1)
    return feats[0] if single else feats


# ---------------------------------------------------------------------------
# observation encodings


@dataclass(frozen=True)
class XEncoding:
    """How an observation enters the network: raw scalar, or one-hot over size."""

    kind: str  # "scalar" | "onehot"
    size: int = 1

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0
        xv = np.atleast_1d(x)
        if self.kind == "scalar":
            out = xv[:, None]
        elif self.kind == "onehot":
            idx = np.round(xv).astype(int)
            if np.any(idx != xv) or np.any(idx < 0) or np.any(idx >= self.size):
                raise ValueError(f"observation {x} outside one-hot support 0..{self.size - 1}")
            out = np.zeros((len(xv), self.size))
            out[np.arange(len(xv)), idx] = 1.0
        else:
            raise ValueError(f"unknown encoding '{self.kind}'")
        return out[0] if single else out


def encoding_for(spec: SimulatorSpec) -> XEncoding:
    if isinstance(spec, simulators.GaussianSim):
        return XEncoding("scalar")
    if isinstance(spec, simulators.MixtureCategoricalSim):
        return XEncoding("onehot", spec.n_classes)
    if isinstance(spec, simulators.GaltonSim):
        return XEncoding("onehot", spec.num_nails)
    raise ValueError(f"no encoding for {type(spec).__name__}")


# ---------------------------------------------------------------------------
# score network and weight schedule


@dataclass
class ScoreNetwork:
    """s(theta_t, t, x): input [theta_t, time features, encoded x]."""

    mlp: Mlp
    task: str
    encoding: XEncoding
    theta_dim: int = 1

    def net_input(self, theta_t, t, x_enc) -> np.ndarray:
        theta_t = np.asarray(theta_t, dtype=float)
        if theta_t.ndim == 1:
            return np.concatenate([theta_t, time_features(t), np.atleast_1d(x_enc)])
        feats = time_features(np.broadcast_to(np.asarray(t, dtype=float), (len(theta_t),)))
        x_enc = np.asarray(x_enc, dtype=float)
        if x_enc.ndim == 1:
            x_enc = np.broadcast_to(x_enc, (len(theta_t), len(x_enc)))
        return np.concatenate([theta_t, feats, x_enc], axis=1)


def make_score_network(spec: SimulatorSpec, rng: np.random.Generator, hidden=(128, 128, 128)) -> ScoreNetwork:
    enc = encoding_for(spec)
    in_dim = spec.theta_dim + TIME_FEATURES + enc.size
    mlp = init_mlp([in_dim, *hidden, spec.theta_dim], rng, zero_final=True)
    return ScoreNetwork(mlp, spec.sim_id, enc, spec.theta_dim)


def score_net_eval(net: ScoreNetwork, theta_t, t, x) -> np.ndarray:
    """Evaluate s(theta_t, t, x) for one state (theta_dim,) or a batch (n, theta_dim)."""
    return score_net_eval_encoded(net, theta_t, t, net.encoding.encode(x))


def score_net_eval_encoded(net: ScoreNetwork, theta_t, t, x_enc) -> np.ndarray:
    """As score_net_eval but with the observation already encoded (hot loops)."""
    out, _ = mlp_forward(net.mlp, net.net_input(theta_t, t, x_enc))
    return out


@dataclass
class WeightSchedule:
    """Learned mixture weight w(t) = sigmoid(MLP(time features)); w in (0, 1)."""

    mlp: Mlp


def make_weight_schedule(rng: np.random.Generator, hidden=(32, 32)) -> WeightSchedule:
    # zero final layer => w(t) starts at exactly 1/2
    return WeightSchedule(init_mlp([TIME_FEATURES, *hidden, 1], rng, zero_final=True))


def weight_schedule_eval(ws: WeightSchedule, t):
    """w(t) strictly inside (0, 1); scalar t -> float, array t -> (n,) array."""
    logits, _ = mlp_forward(ws.mlp, time_features(t))
    # float64 sigmoid rounds to exactly 0/1 for |logit| > ~37; keep the
    # contract's open interval
    out = np.clip(simulators.sigmoid(logits[..., 0]), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adaptive-moment state mirroring a flat parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list[np.ndarray], lr: float = 1e-3) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected update, in place on params and state."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads do not match optimizer state")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at optimizer step {state.step + 1}")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints


def _mlp_doc(mlp: Mlp) -> dict:
    return {
        "sizes": [mlp.in_dim] + [w.shape[1] for w in mlp.weights],
        "activations": list(mlp.activations),
        "params": [p.ravel().tolist() for p in mlp.params()],
    }


def _mlp_from_doc(doc: dict) -> Mlp:
    sizes = doc["sizes"]
    weights, biases = [], []
    flat = doc["params"]
    for i in range(len(sizes) - 1):
        weights.append(np.asarray(flat[2 * i], dtype=float).reshape(sizes[i], sizes[i + 1]))
        biases.append(np.asarray(flat[2 * i + 1], dtype=float))
    return Mlp(weights, biases, list(doc["activations"]))


def save_checkpoint(
    path,
    net: ScoreNetwork,
    sched: NoiseSchedule,
    ws: WeightSchedule | None = None,
    meta: dict | None = None,
) -> None:
    """Single JSON document; row-major flat parameter arrays, 17 significant digits."""
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "task": net.task,
        "beta_min": sched.beta_min,
        "beta_max": sched.beta_max,
        "encoding": {"kind": net.encoding.kind, "size": net.encoding.size},
        "theta_dim": net.theta_dim,
        "score_net": _mlp_doc(net.mlp),
        "weight_schedule": _mlp_doc(ws.mlp) if ws is not None else None,
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        fh.write(dumps17(doc) + "\n")


def load_checkpoint(path):
    """Returns (net, sched, ws_or_None, meta)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema')}")
    enc = XEncoding(doc["encoding"]["kind"], doc["encoding"]["size"])
    net = ScoreNetwork(_mlp_from_doc(doc["score_net"]), doc["task"], enc, doc["theta_dim"])
    sched = NoiseSchedule(doc["beta_min"], doc["beta_max"])
    ws = WeightSchedule(_mlp_from_doc(doc["weight_schedule"])) if doc["weight_schedule"] else None
    return net, sched, ws, doc.get("meta", {})
