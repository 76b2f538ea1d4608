"""Small differentiable-network substrate.

Parameters live in a :class:`ParameterSet` (an ordered name -> float64 array
mapping).  Forward passes record what the backward pass needs; backward
passes are hand-written reverse mode over the whole unrolled sequence.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np


class ConfigurationError(ValueError):
    """Shapes or settings that cannot work together."""


class NumericError(ArithmeticError):
    """A computation produced (or was given) NaN/Inf."""


class CheckpointError(ValueError):
    """Malformed checkpoint stream."""


class ParameterSet:
    """Ordered, named float64 arrays.  Also used for gradients."""

    def __init__(self, entries: Iterable[tuple[str, np.ndarray]] = ()):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in entries:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._entries[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._entries:
            raise KeyError(name)
        if np.shape(value) != self._entries[name].shape:
            raise ConfigurationError(f"shape mismatch for {name!r}")
        self._entries[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet((k, v.copy()) for k, v in self._entries.items())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet((k, np.zeros_like(v)) for k, v in self._entries.items())

    def flat(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._entries.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        offset = 0
        for name, v in self._entries.items():
            n = v.size
            self._entries[name] = np.asarray(vec[offset:offset + n], dtype=np.float64).reshape(v.shape).copy()
            offset += n
        if offset != len(vec):
            raise ConfigurationError("flat vector length does not match parameter count")

    @property
    def size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self._entries.values())

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self._entries.values())))

    def congruent(self, other: "ParameterSet") -> bool:
        return self.shapes() == other.shapes() and self.names() == other.names()

    def iadd_scaled(self, other: "ParameterSet", scale: float = 1.0) -> "ParameterSet":
        for k, v in other.items():
            self._entries[k] += scale * v
        return self

    def scaled(self, scale: float) -> "ParameterSet":
        return ParameterSet((k, scale * v) for k, v in self._entries.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}{list(v.shape)}" for k, v in self._entries.items())
        return f"ParameterSet({inner})"


# Gradients share the container; the alias documents intent at call sites.
GradientSet = ParameterSet


# ---------------------------------------------------------------- activations

def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and a single ufunc call.
    return 0.5 * np.tanh(0.5 * x) + 0.5


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with max subtraction.  Masked-out entries get 0."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ConfigurationError("softmax of an empty vector")
    if np.isnan(z).any():
        raise NumericError("NaN logits")
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


_ACTIVATIONS = ("relu", "tanh", "linear")


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "linear":
        return z
    raise ConfigurationError(f"unknown activation {activation!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "linear") -> np.ndarray:
    """``activation(x @ W + b)``.  ``W`` has shape (in, out); x may be batched."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ConfigurationError(
            f"dense shapes do not match: input {x.shape}, W {W.shape}, b {b.shape}")
    return _activate(x @ W + b, activation)


# ----------------------------------------------------------------------- LSTM

LSTM_GATES = ("i", "f", "o", "g")


@dataclass
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, units: int, batch: int | None = None) -> "RecurrentState":
        shape = (units,) if batch is None else (batch, units)
        return cls(np.zeros(shape), np.zeros(shape))


def lstm_fused(params: ParameterSet, prefix: str = "lstm") -> tuple[np.ndarray, np.ndarray]:
    """Stack the per-gate matrices into one (in+H, 4H) matrix and a 4H bias."""
    W = np.concatenate([params[f"{prefix}/W_{g}"] for g in LSTM_GATES], axis=1)
    b = np.concatenate([params[f"{prefix}/b_{g}"] for g in LSTM_GATES])
    return W, b


def _lstm_cell(h, c, x, W, b):
    H = h.shape[-1]
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    s = sigmoid(z[..., :3 * H])
    i = s[..., :H]
    f = s[..., H:2 * H]
    o = s[..., 2 * H:]
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, i, f, o, g, tc)


def lstm_step(state: RecurrentState, x: np.ndarray, params: ParameterSet, prefix: str = "lstm") -> RecurrentState:
    """One LSTM transition (no peepholes).  Works on vectors or row batches."""
    W, b = lstm_fused(params, prefix)
    H = state.hidden.shape[-1]
    if W.shape[1] != 4 * H or x.shape[-1] + H != W.shape[0]:
        raise ConfigurationError(
            f"LSTM input of size {x.shape[-1]} / state {H} does not match weights {W.shape}")
    h, c, _ = _lstm_cell(state.hidden, state.cell, np.asarray(x, dtype=np.float64), W, b)
    return RecurrentState(h, c)


# ------------------------------------------------------------------- networks

def _check_finite_input(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise NumericError("non-finite network input")


@dataclass
class Trace:
    """What a sequence forward pass keeps for the backward pass."""

    inputs: np.ndarray
    features: np.ndarray
    outputs: np.ndarray
    cache: list = field(default_factory=list)
    fused: np.ndarray | None = None


class Network:
    """Body (LSTM or feed-forward stack) followed by one dense head.

    ``forward_sequence`` maps a (T, in) observation sequence to (T, out)
    pre-activation head outputs; ``backward`` takes (T, out) gradients with
    respect to those outputs and returns a :class:`GradientSet`.
    """

    def __init__(self, input_dim: int, output_dim: int, body: str = "lstm",
                 hidden: int | tuple[int, ...] = 32, activation: str = "relu",
                 params: ParameterSet | None = None):
        if body not in ("lstm", "feedforward"):
            raise ConfigurationError(f"unknown body {body!r}")
        if body == "feedforward" and activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.body = body
        self.activation = activation
        if body == "lstm":
            self.hidden = (int(hidden),) if np.isscalar(hidden) else tuple(hidden)
            if len(self.hidden) != 1:
                raise ConfigurationError("LSTM body takes a single hidden size")
        else:
            self.hidden = (int(hidden),) if np.isscalar(hidden) else tuple(int(h) for h in hidden)
        self.params = params if params is not None else self.zero_params()
        expected = self.zero_params().shapes()
        if self.params.shapes() != expected:
            raise ConfigurationError("parameter shapes do not match the architecture")

    @property
    def recurrent(self) -> bool:
        return self.body == "lstm"

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1] if self.hidden else self.input_dim

    def zero_params(self) -> ParameterSet:
        p = ParameterSet()
        if self.body == "lstm":
            H = self.hidden[0]
            for g in LSTM_GATES:
                p.add(f"lstm/W_{g}", np.zeros((self.input_dim + H, H)))
                p.add(f"lstm/b_{g}", np.zeros(H))
        else:
            fan_in = self.input_dim
            for k, width in enumerate(self.hidden):
                p.add(f"fc{k}/W", np.zeros((fan_in, width)))
                p.add(f"fc{k}/b", np.zeros(width))
                fan_in = width
        p.add("head/W", np.zeros((self.feature_dim, self.output_dim)))
        p.add("head/b", np.zeros(self.output_dim))
        return p

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        """Uniform(-0.08, 0.08) for recurrent weights with forget bias 1; He for ReLU layers."""
        p = self.zero_params()
        if self.body == "lstm":
            for g in LSTM_GATES:
                p[f"lstm/W_{g}"] = rng.uniform(-0.08, 0.08, p[f"lstm/W_{g}"].shape)
            p["lstm/b_f"] = np.ones_like(p["lstm/b_f"])
            p["head/W"] = rng.uniform(-0.08, 0.08, p["head/W"].shape)
        else:
            for k, _ in enumerate(self.hidden):
                W = p[f"fc{k}/W"]
                if self.activation == "relu":
                    p[f"fc{k}/W"] = rng.normal(0.0, np.sqrt(2.0 / W.shape[0]), W.shape)
                else:
                    lim = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
                    p[f"fc{k}/W"] = rng.uniform(-lim, lim, W.shape)
            W = p["head/W"]
            lim = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            p["head/W"] = rng.uniform(-lim, lim, W.shape)
        self.params = p
        return p

    def clone(self) -> "Network":
        return Network(self.input_dim, self.output_dim, self.body,
                       self.hidden[0] if self.body == "lstm" else self.hidden,
                       self.activation, self.params.copy())

    def same_body(self, other: "Network") -> bool:
        mine = {k: v for k, v in self.params.shapes().items() if not k.startswith("head/")}
        theirs = {k: v for k, v in other.params.shapes().items() if not k.startswith("head/")}
        return self.body == other.body and self.activation == other.activation and mine == theirs

    # -- step-wise interface (rollouts) ---------------------------------
    def initial_state(self, batch: int = 1) -> RecurrentState | None:
        if self.body == "lstm":
            return RecurrentState.zeros(self.hidden[0], batch)
        return None

    def step(self, state: RecurrentState | None, x: np.ndarray, fused=None):
        """Advance by one observation row-batch; returns (new_state, head outputs)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"observation size {x.shape[-1]} != {self.input_dim}")
        p = self.params
        if self.body == "lstm":
            W, b = fused if fused is not None else lstm_fused(p)
            h, c, _ = _lstm_cell(state.hidden, state.cell, x, W, b)
            state = RecurrentState(h, c)
            feat = h
        else:
            feat = x
            for k, _ in enumerate(self.hidden):
                feat = dense_forward(feat, p[f"fc{k}/W"], p[f"fc{k}/b"], self.activation)
        return state, feat @ p["head/W"] + p["head/b"]

    # -- sequence interface (learning) ----------------------------------
    def forward_sequence(self, obs: np.ndarray) -> Trace:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.input_dim:
            raise ConfigurationError(f"expected (T, {self.input_dim}) observations, got {obs.shape}")
        _check_finite_input(obs)
        p = self.params
        if self.body == "lstm":
            W, b = lstm_fused(p)
            T, H = len(obs), self.hidden[0]
            h = np.zeros((1, H))
            c = np.zeros((1, H))
            feats = np.empty((T, H))
            cache = []
            for t in range(T):
                c_prev = c
                h, c, parts = _lstm_cell(h, c, obs[t:t + 1], W, b)
                cache.append((c_prev, parts))
                feats[t] = h[0]
        else:
            cache = []
            feat = obs
            for k, _ in enumerate(self.hidden):
                z = feat @ p[f"fc{k}/W"] + p[f"fc{k}/b"]
                a = _activate(z, self.activation)
                cache.append((feat, z, a))
                feat = a
            feats = feat
            W = None
        out = feats @ p["head/W"] + p["head/b"]
        return Trace(obs, feats, out, cache, W)

    def backward(self, trace: Trace, d_out: np.ndarray) -> GradientSet:
        """Exact gradient of sum(d_out * outputs) with respect to all parameters."""
        d_out = np.asarray(d_out, dtype=np.float64)
        if d_out.ndim == 1:
            d_out = d_out[:, None]
        if d_out.shape != trace.outputs.shape:
            raise RuntimeError(f"upstream gradient {d_out.shape} does not match trace {trace.outputs.shape}")
        p = self.params
        grads = p.zeros_like()
        grads["head/W"] = trace.features.T @ d_out
        grads["head/b"] = d_out.sum(axis=0)
        d_feat = d_out @ p["head/W"].T
        if self.body == "lstm":
            W = trace.fused
            steps = trace.cache
            if len(steps) != len(trace.inputs):
                raise RuntimeError("trace length mismatch")
            H = self.hidden[0]
            dW = np.zeros_like(W)
            db = np.zeros(4 * H)
            dh_next = np.zeros(H)
            dc_next = np.zeros(H)
            W_h = W[self.input_dim:]
            for t in range(len(steps) - 1, -1, -1):
                c_prev, (xh, i, f, o, g, tc) = steps[t]
                i, f, o, g, tc, c_prev = i[0], f[0], o[0], g[0], tc[0], c_prev[0]
                dh = d_feat[t] + dh_next
                do = dh * tc
                dc = dh * o * (1.0 - tc * tc) + dc_next
                di = dc * g
                dg = dc * i
                df = dc * c_prev
                dc_next = dc * f
                dz = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                                     do * o * (1.0 - o), dg * (1.0 - g * g)])
                dW += np.outer(xh[0], dz)
                db += dz
                dh_next = W_h @ dz
            for k, gname in enumerate(LSTM_GATES):
                grads[f"lstm/W_{gname}"] = dW[:, k * H:(k + 1) * H]
                grads[f"lstm/b_{gname}"] = db[k * H:(k + 1) * H]
        else:
            d = d_feat
            for k in range(len(self.hidden) - 1, -1, -1):
                x_in, z, a = trace.cache[k]
                dz = d * _activation_grad(z, a, self.activation)
                grads[f"fc{k}/W"] = x_in.T @ dz
                grads[f"fc{k}/b"] = dz.sum(axis=0)
                d = dz @ p[f"fc{k}/W"].T
        return grads


# ----------------------------------------------------------------- optimizers

@dataclass
class OptimizerState:
    kind: str
    lr: float
    rho: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    accumulators: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def adadelta(cls, params: ParameterSet, lr: float = 1.0, rho: float = 0.95, eps: float = 1e-6):
        acc = {"sq_grad": {k: np.zeros_like(v) for k, v in params.items()},
               "sq_update": {k: np.zeros_like(v) for k, v in params.items()}}
        return cls("adadelta", lr, rho=rho, eps=eps, accumulators=acc)

    @classmethod
    def adam(cls, params: ParameterSet, lr: float = 0.005, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8):
        acc = {"m": {k: np.zeros_like(v) for k, v in params.items()},
               "v": {k: np.zeros_like(v) for k, v in params.items()}}
        return cls("adam", lr, beta1=beta1, beta2=beta2, eps=eps, accumulators=acc)

    def copy(self) -> "OptimizerState":
        acc = {slot: {k: v.copy() for k, v in d.items()} for slot, d in self.accumulators.items()}
        return OptimizerState(self.kind, self.lr, self.rho, self.beta1, self.beta2,
                              self.eps, acc, self.step_count)


def _check_congruent(params: ParameterSet, grads: GradientSet, opt: OptimizerState) -> None:
    if not params.congruent(grads):
        raise ConfigurationError("gradient set does not match parameter set")
    for slot in opt.accumulators.values():
        if {k: v.shape for k, v in slot.items()} != params.shapes():
            raise ConfigurationError("optimizer state does not match parameter set")


def _commit(params: ParameterSet, new_values: dict, opt: OptimizerState, new_acc: dict) -> None:
    for v in new_values.values():
        if not np.isfinite(v).all():
            raise NumericError("optimizer step produced non-finite parameters")
    for k, v in new_values.items():
        params[k] = v
    opt.accumulators = new_acc
    opt.step_count += 1


def adadelta_step(params: ParameterSet, grads: GradientSet, opt: OptimizerState) -> None:
    """In-place Adadelta descent step along ``grads``."""
    if opt.kind != "adadelta":
        raise ConfigurationError(f"adadelta_step on a {opt.kind} state")
    _check_congruent(params, grads, opt)
    rho, eps = opt.rho, opt.eps
    sq_g, sq_u = opt.accumulators["sq_grad"], opt.accumulators["sq_update"]
    new_vals, new_g, new_u = {}, {}, {}
    for k, g in grads.items():
        eg = rho * sq_g[k] + (1.0 - rho) * g * g
        update = g * np.sqrt(sq_u[k] + eps) / np.sqrt(eg + eps)
        new_u[k] = rho * sq_u[k] + (1.0 - rho) * update * update
        new_g[k] = eg
        new_vals[k] = params[k] - opt.lr * update
    _commit(params, new_vals, opt, {"sq_grad": new_g, "sq_update": new_u})


def adam_step(params: ParameterSet, grads: GradientSet, opt: OptimizerState) -> None:
    """In-place Adam descent step with bias correction."""
    if opt.kind != "adam":
        raise ConfigurationError(f"adam_step on a {opt.kind} state")
    _check_congruent(params, grads, opt)
    t = opt.step_count + 1
    b1, b2 = opt.beta1, opt.beta2
    m, v = opt.accumulators["m"], opt.accumulators["v"]
    new_vals, new_m, new_v = {}, {}, {}
    for k, g in grads.items():
        new_m[k] = b1 * m[k] + (1.0 - b1) * g
        new_v[k] = b2 * v[k] + (1.0 - b2) * g * g
        m_hat = new_m[k] / (1.0 - b1 ** t)
        v_hat = new_v[k] / (1.0 - b2 ** t)
        new_vals[k] = params[k] - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    _commit(params, new_vals, opt, {"m": new_m, "v": new_v})


def optimizer_step(params: ParameterSet, grads: GradientSet, opt: OptimizerState) -> None:
    if opt.kind == "adadelta":
        adadelta_step(params, grads, opt)
    elif opt.kind == "adam":
        adam_step(params, grads, opt)
    else:
        raise ConfigurationError(f"unknown optimizer {opt.kind!r}")


# -------------------------------------------------------------- checkpoints

CHECKPOINT_HEADER = "RPG-CKPT v1"


def save_params(params: ParameterSet) -> bytes:
    buf = io.StringIO()
    buf.write(CHECKPOINT_HEADER + "\n")
    for name, v in params.items():
        buf.write(" ".join([name, str(v.ndim), *map(str, v.shape)]) + "\n")
        buf.write(" ".join(f"{x:.17g}" for x in v.ravel()) + "\n")
    return buf.getvalue().encode("ascii")


def load_params(data: bytes | str) -> ParameterSet:
    text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise CheckpointError("missing 'RPG-CKPT v1' header at line 1")
    params = ParameterSet()
    ln = 1
    while ln < len(lines):
        head = lines[ln].split()
        where = f"line {ln + 1}"
        if len(head) < 2:
            raise CheckpointError(f"bad entry header at {where}: {lines[ln]!r}")
        name = head[0]
        try:
            ndim = int(head[1])
            shape = tuple(int(d) for d in head[2:])
        except ValueError:
            raise CheckpointError(f"entry {name!r}: non-integer dimensions at {where}") from None
        if ndim != len(shape) or any(d < 0 for d in shape):
            raise CheckpointError(f"entry {name!r}: dimension list does not match ndim at {where}")
        if ln + 1 >= len(lines):
            raise CheckpointError(f"entry {name!r}: truncated, value line missing after {where}")
        try:
            values = np.array([float(x) for x in lines[ln + 1].split()], dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"entry {name!r}: unparseable value at line {ln + 2}") from None
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(
                f"entry {name!r}: expected {expected} values, found {values.size} at line {ln + 2}")
        try:
            params.add(name, values.reshape(shape))
        except ConfigurationError as exc:
            raise CheckpointError(f"entry {name!r}: {exc} at {where}") from None
        ln += 2
    return params
