"""Minimal reverse-mode differentiation over flat parameter vectors.

The engine records a forward pass on a single-use :class:`Tape` whose leaf
is the flat parameter vector of an MLP generator; ``Tape.backward`` replays
the recorded operations to produce the exact gradient.  Only the operations
the rank-based losses need are implemented (affine layers, pointwise
nonlinearities, soft-count kernels, norms), all in float64.

Subgradient conventions are deterministic: ReLU and |.| both take slope 0
at the kink.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import json
import numpy as np

from .rng import RandomSource

__all__ = [
    "Tape",
    "Var",
    "TapeConsumedError",
    "GeneratorSpec",
    "AdamState",
    "adam_init",
    "adam_step",
    "mlp_forward",
    "mlp_forward_tape",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

_ACTIVATIONS = ("relu", "tanh", "identity")


class TapeConsumedError(RuntimeError):
    """Raised when a tape's backward pass is invoked twice."""


class Tape:
    """Single-use record of one forward computation."""

    def __init__(self):
        self._consumed = False
        self._leaf: Var | None = None

    def leaf(self, value: np.ndarray) -> "Var":
        if self._leaf is not None:
            raise ValueError("tape already has a leaf parameter vector")
        self._leaf = Var(np.asarray(value, dtype=np.float64), self)
        return self._leaf

    def backward(self, loss: "Var", upstream: float = 1.0) -> np.ndarray:
        """Gradient of a scalar ``loss`` with respect to the tape's leaf."""
        if self._consumed:
            raise TapeConsumedError("tape has already been consumed by a backward pass")
        self._consumed = True
        if self._leaf is None:
            raise ValueError("tape has no leaf")
        if loss.value.size != 1:
            raise ValueError("backward expects a scalar loss")

        order = _topo_order(loss)
        grads: dict[int, np.ndarray] = {id(loss): np.full_like(loss.value, float(upstream))}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, vjp in node._parents:
                pg = vjp(g)
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            if node is self._leaf:
                grads[id(node)] = g  # keep the leaf's accumulation
        out = grads.get(id(self._leaf))
        if out is None:
            return np.zeros_like(self._leaf.value)
        return np.asarray(out, dtype=np.float64).reshape(self._leaf.value.shape)


def _topo_order(root: "Var") -> list["Var"]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Var:
    """Array value tracked on a tape."""

    __slots__ = ("value", "_tape", "_parents")

    # defer mixed numpy/Var arithmetic to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, tape: Tape, parents: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self._tape = tape
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        ov, parents = _split(other)
        out = Var(self.value + ov, self._tape)
        sh, osh = self.value.shape, np.shape(ov)
        links = [(self, lambda g: _unbroadcast(g, sh))]
        if parents is not None:
            links.append((parents, lambda g: _unbroadcast(g, osh)))
        out._parents = tuple(links)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        ov, parents = _split(other)
        out = Var(self.value - ov, self._tape)
        sh, osh = self.value.shape, np.shape(ov)
        links = [(self, lambda g: _unbroadcast(g, sh))]
        if parents is not None:
            links.append((parents, lambda g: _unbroadcast(-g, osh)))
        out._parents = tuple(links)
        return out

    def __rsub__(self, other):
        ov, _ = _split(other)
        sh = self.value.shape
        out = Var(ov - self.value, self._tape)
        out._parents = ((self, lambda g: _unbroadcast(-g, sh)),)
        return out

    def __mul__(self, other):
        ov, parents = _split(other)
        out = Var(self.value * ov, self._tape)
        sh, osh = self.value.shape, np.shape(ov)
        sv = self.value
        links = [(self, lambda g: _unbroadcast(g * ov, sh))]
        if parents is not None:
            links.append((parents, lambda g: _unbroadcast(g * sv, osh)))
        out._parents = tuple(links)
        return out

    __rmul__ = __mul__

    def __truediv__(self, const):
        if isinstance(const, Var):
            raise TypeError("division by a tracked value is not supported")
        return self * (1.0 / const)

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        ov, parents = _split(other)
        out = Var(self.value @ ov, self._tape)
        sv = self.value
        links = [(self, lambda g: g @ ov.T)]
        if parents is not None:
            links.append((parents, lambda g: sv.T @ g))
        out._parents = tuple(links)
        return out

    def __rmatmul__(self, other):
        ov, _ = _split(other)
        out = Var(ov @ self.value, self._tape)
        out._parents = ((self, lambda g: ov.T @ g),)
        return out

    def __getitem__(self, idx):
        sh = self.value.shape
        out = Var(self.value[idx], self._tape)

        def vjp(g):
            full = np.zeros(sh)
            np.add.at(full, idx, g)
            return full

        out._parents = ((self, vjp),)
        return out

    def reshape(self, *shape):
        sh = self.value.shape
        out = Var(self.value.reshape(*shape), self._tape)
        out._parents = ((self, lambda g: g.reshape(sh)),)
        return out


def _split(x):
    """Return (raw value, Var-or-None) for an operand."""
    if isinstance(x, Var):
        return x.value, x
    return np.asarray(x, dtype=np.float64), None


# -- pointwise functions -----------------------------------------------------


def vexp(x: Var) -> Var:
    out = Var(np.exp(x.value), x._tape)
    ov = out.value
    out._parents = ((x, lambda g: g * ov),)
    return out


def vtanh(x: Var) -> Var:
    out = Var(np.tanh(x.value), x._tape)
    ov = out.value
    out._parents = ((x, lambda g: g * (1.0 - ov * ov)),)
    return out


def vrelu(x: Var) -> Var:
    mask = x.value > 0.0
    out = Var(np.where(mask, x.value, 0.0), x._tape)
    out._parents = ((x, lambda g: g * mask),)
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function evaluated branch-wise so large |x| cannot overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def vsigmoid(x: Var) -> Var:
    out = Var(stable_sigmoid(x.value), x._tape)
    ov = out.value
    out._parents = ((x, lambda g: g * ov * (1.0 - ov)),)
    return out


def vabs(x: Var) -> Var:
    sign = np.sign(x.value)  # sign(0) = 0: deterministic subgradient at the kink
    out = Var(np.abs(x.value), x._tape)
    out._parents = ((x, lambda g: g * sign),)
    return out


def vsqrt(x: Var) -> Var:
    out = Var(np.sqrt(x.value), x._tape)
    ov = out.value
    out._parents = ((x, lambda g: g * 0.5 / ov),)
    return out


def vsum(x: Var, axis=None) -> Var:
    sh = x.value.shape
    out = Var(np.sum(x.value, axis=axis), x._tape)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, sh).copy()
        return np.broadcast_to(np.expand_dims(g, axis), sh).copy()

    out._parents = ((x, vjp),)
    return out


def vmean(x: Var, axis=None) -> Var:
    count = x.value.size if axis is None else x.value.shape[axis]
    return vsum(x, axis=axis) * (1.0 / count)


_ACT_TAPE = {"relu": vrelu, "tanh": vtanh, "identity": lambda v: v}
_ACT_PLAIN = {
    "relu": lambda x: np.where(x > 0.0, x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}


# ---------------------------------------------------------------------------
# MLP generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """MLP architecture: layer widths (input first) and per-layer activations."""

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if len(self.activations) != len(self.layer_widths) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def is_piecewise_linear(self) -> bool:
        return all(a in ("relu", "identity") for a in self.activations)

    def layout(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        """Slices of the flat parameter vector holding each layer's (W, b)."""
        out = []
        offset = 0
        for din, dout in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            w = slice(offset, offset + din * dout)
            offset += din * dout
            b = slice(offset, offset + dout)
            offset += dout
            out.append((w, b, (din, dout)))
        return out

    @property
    def n_params(self) -> int:
        return sum(din * dout + dout for din, dout in zip(self.layer_widths[:-1], self.layer_widths[1:]))

    def init_params(self) -> np.ndarray:
        """Seeded init: Kaiming-uniform for relu layers, Xavier-uniform else."""
        rng = RandomSource(self.seed).split("generator-init")
        params = np.zeros(self.n_params)
        for (w_sl, _b_sl, (din, dout)), act in zip(self.layout(), self.activations):
            if act == "relu":
                bound = np.sqrt(6.0 / din)
            else:
                bound = np.sqrt(6.0 / (din + dout))
            params[w_sl] = bound * (2.0 * rng.uniform(din * dout) - 1.0)
        return params

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            layer_widths=tuple(d["layer_widths"]),
            activations=tuple(d["activations"]),
            seed=int(d.get("seed", 0)),
        )


def mlp_forward(params: np.ndarray, spec: GeneratorSpec, x: np.ndarray) -> np.ndarray:
    """Plain forward pass: (n, d_in) -> (n, d_out)."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise ValueError(f"params must have shape ({spec.n_params},)")
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"input must have shape (n, {spec.input_dim})")
    for (w_sl, b_sl, (din, dout)), act in zip(spec.layout(), spec.activations):
        h = h @ params[w_sl].reshape(din, dout) + params[b_sl]
        h = _ACT_PLAIN[act](h)
    return h


def mlp_forward_tape(params: Var, spec: GeneratorSpec, x: np.ndarray) -> Var:
    """Forward pass recorded on the params' tape; ``x`` is a constant."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input must have shape (n, {spec.input_dim})")
    h: Var | None = None
    for (w_sl, b_sl, (din, dout)), act in zip(spec.layout(), spec.activations):
        w = params[w_sl].reshape(din, dout)
        b = params[b_sl]
        h = (x @ w if h is None else h @ w) + b
        h = _ACT_TAPE[act](h)
    return h


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params: int, lr: float) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0, lr=float(lr))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One Adam update with bias correction; returns (params, state)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError("parameter/gradient shapes disagree")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: np.ndarray
    generator: GeneratorSpec
    noise: dict | None
    transform: dict | None
    meta: dict


def save_checkpoint(path, params: np.ndarray, generator: GeneratorSpec, noise=None, transform=None, meta=None) -> None:
    """Write a checkpoint: one JSON header line, then float64 little-endian data."""
    params = np.asarray(params, dtype=np.float64)
    header = {
        "format": "islkit-checkpoint-v1",
        "generator": generator.to_dict(),
        "n_params": int(params.size),
        "noise": noise,
        "transform": transform,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "islkit-checkpoint-v1":
        raise ValueError("unrecognized checkpoint format")
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if params.size != header["n_params"]:
        raise ValueError("checkpoint payload length disagrees with header")
    return Checkpoint(
        params=params,
        generator=GeneratorSpec.from_dict(header["generator"]),
        noise=header.get("noise"),
        transform=header.get("transform"),
        meta=header.get("meta", {}),
    )
