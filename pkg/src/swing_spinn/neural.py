"""Dense tanh networks with an exact time tangent and parameter gradients.

Parameters live in one flat vector.  Layer ``l`` occupies a contiguous
block holding its weight matrix ``W_l`` of shape ``(fan_in, fan_out)`` in
row-major order followed by its bias ``b_l`` of length ``fan_out``.

The time derivative of the outputs is propagated forward as a tangent
alongside the activations.  :func:`backward` is the reverse pass over that
augmented computation, so losses that contain the tangent (the physics
residual) get exact parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, batch_ids=None):
        super().__init__(message)
        self.batch_ids = batch_ids


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("MlpSpec needs >= 2 positive layer sizes")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activation is supported")

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "seed": self.seed, "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(layer_sizes=tuple(d["layer_sizes"]), seed=int(d.get("seed", 0)),
                   activation=d.get("activation", "tanh"))


def layer_views(params, spec: MlpSpec):
    """List of ``(W, b)`` views into the flat parameter vector."""
    views = []
    off = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[off: off + a * b].reshape(a, b)
        off += a * b
        views.append((w, params[off: off + b]))
        off += b
    return views


def init_xavier_normal(spec: MlpSpec, rng=None) -> np.ndarray:
    """Weights ~ N(0, 2/(fan_in+fan_out)), zero biases."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    params = np.zeros(spec.n_params)
    for w, _ in layer_views(params, spec):
        fan_in, fan_out = w.shape
        w[...] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=w.shape)
    return params


def _check_input(x, spec):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {spec.n_in}")
    return x


def forward(params, spec: MlpSpec, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = _check_input(x, spec)
    h = x
    views = layer_views(params, spec)
    for w, b in views[:-1]:
        h = np.tanh(h @ w + b)
    w, b = views[-1]
    return h @ w + b


@dataclass(eq=False)
class EvalRecord:
    outputs: np.ndarray
    time_tangent: np.ndarray | None = None
    cache: list = field(default_factory=list, repr=False)


def forward_record(params, spec: MlpSpec, x, t_index=None, t_scale=1.0) -> EvalRecord:
    """Forward pass keeping the intermediates needed by :func:`backward`.

    With ``t_index`` set, the tangent of the outputs along input column
    ``t_index`` is carried through every layer.  ``t_scale`` is the chain
    factor from physical time to that (normalized) column, ``1/std_t``.
    """
    x = np.atleast_2d(_check_input(x, spec))
    views = layer_views(params, spec)
    h = x
    dh = None
    if t_index is not None:
        dh = np.zeros_like(x)
        dh[:, t_index] = t_scale
    cache = []
    for w, b in views[:-1]:
        o = np.tanh(h @ w + b)
        do = None if dh is None else (1.0 - o * o) * (dh @ w)
        cache.append((h, dh, o, do))
        h, dh = o, do
    w, b = views[-1]
    cache.append((h, dh, None, None))
    out = h @ w + b
    tan = None if dh is None else dh @ w
    return EvalRecord(outputs=out, time_tangent=tan, cache=cache)


def forward_with_time_derivative(params, spec: MlpSpec, x, t_index, t_scale=1.0) -> EvalRecord:
    return forward_record(params, spec, x, t_index=t_index, t_scale=t_scale)


def backward(record: EvalRecord, params, spec: MlpSpec, g_out, g_tan=None):
    """Reverse pass: gradients w.r.t. parameters and inputs.

    ``g_out`` and ``g_tan`` are the loss gradients w.r.t. the outputs and the
    time tangent.  Returns ``(g_params, g_input)``.
    """
    views = layer_views(params, spec)
    grad = np.zeros_like(params)
    gviews = layer_views(grad, spec)
    ga = np.atleast_2d(np.asarray(g_out, dtype=float))
    gda = None
    if g_tan is not None:
        if record.time_tangent is None:
            raise ValueError("tangent gradient given but record carries no tangent")
        gda = np.atleast_2d(np.asarray(g_tan, dtype=float))
    for layer in range(len(views) - 1, -1, -1):
        w, _ = views[layer]
        gw, gb = gviews[layer]
        h, dh, _, _ = record.cache[layer]
        gw += h.T @ ga
        gb += ga.sum(axis=0)
        gh = ga @ w.T
        gdh = None
        if gda is not None:
            gw += dh.T @ gda
            gdh = gda @ w.T
        if layer == 0:
            return grad, gh
        # through o = tanh(a), do = (1 - o^2) da
        _, _, o, do = record.cache[layer - 1]
        s = 1.0 - o * o
        ga = gh * s
        if gdh is not None:
            if dh is not None and do is not None:
                # d(s * da)/da via s' = -2 o s, where da = do / s
                ga = ga - 2.0 * o * gdh * do
            gda = gdh * s
    return grad, None


def loss_gradient(record: EvalRecord, params, spec: MlpSpec, g_out, g_tan=None, loss=None, batch_ids=None):
    """Parameter gradient of a scalar loss given its output/tangent sensitivities."""
    if loss is not None and not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss!r}", batch_ids)
    return backward(record, params, spec, g_out, g_tan)[0]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n, **hyper):
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


def adam_step(state: AdamState, params, grad):
    """Bias-corrected Adam update; returns new ``(state, params)``."""
    if state.m.shape != params.shape or grad.shape != params.shape:
        raise ValueError("Adam state, parameters and gradient shapes differ")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps), new_params
