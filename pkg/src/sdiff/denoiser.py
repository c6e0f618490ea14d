"""Conditional denoising network with exact analytic gradients.

Architecture (all hand-rolled numpy, trained at 32-bit):

* Two scalar gate networks ``f`` and ``h`` (one hidden tanh layer of width
  ``film_hidden``, shared across coordinates) map each coordinate of the
  spectral condition c to a gain ``gamma_i = f(c_i)`` and shift
  ``beta_i = h(c_i)``. Their output heads are zero-initialized, so at step 0
  the fused input ``v_fused = v_t + gamma * c + beta`` equals ``v_t`` exactly
  and the output is independent of the condition.
* A sinusoidal embedding of the diffusion time t (geometric frequency ladder
  from 1 to ``MAX_TIME_FREQ`` radians, sized for t in [0, 1]) followed by a
  learned linear projection.
* A single-hidden-layer tanh MLP trunk on ``concat(v_fused, time)`` that
  predicts the clean spectral coefficients.

Parameter count: 2*(3*film_hidden + 1) + time_dim*(time_dim + 1)
+ hidden*(k + time_dim + 1) + k*(hidden + 1).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArtifactError

MAX_TIME_FREQ = 1e4

_CKPT_MAGIC = b"SDIFFMDL"
_CKPT_VERSION = 1

# Serialization order of the parameter arrays (checkpoints depend on it).
PARAM_FIELDS = (
    "film_f_w1", "film_f_b1", "film_f_w2", "film_f_b2",
    "film_h_w1", "film_h_b1", "film_h_w2", "film_h_b2",
    "time_w", "time_b",
    "trunk_w1", "trunk_b1", "trunk_w2", "trunk_b2",
)


@dataclass
class DenoiserParams:
    k: int
    hidden: int
    time_dim: int
    film_hidden: int
    seed: int
    film_f_w1: np.ndarray
    film_f_b1: np.ndarray
    film_f_w2: np.ndarray
    film_f_b2: np.ndarray
    film_h_w1: np.ndarray
    film_h_b1: np.ndarray
    film_h_w2: np.ndarray
    film_h_b2: np.ndarray
    time_w: np.ndarray
    time_b: np.ndarray
    trunk_w1: np.ndarray
    trunk_b1: np.ndarray
    trunk_w2: np.ndarray
    trunk_b2: np.ndarray
    basis_hash: str | None = None

    @property
    def dtype(self):
        return self.trunk_w1.dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "DenoiserParams":
        return replace(self, **{n: a.copy() for n, a in self.arrays().items()})

    def astype(self, dtype) -> "DenoiserParams":
        return replace(self, **{n: a.astype(dtype) for n, a in self.arrays().items()})


def parameter_count(k: int, hidden: int, time_dim: int, film_hidden: int) -> int:
    """Closed-form size of the parameter vector for the declared shapes."""
    return (2 * (3 * film_hidden + 1)
            + time_dim * (time_dim + 1)
            + hidden * (k + time_dim + 1)
            + k * (hidden + 1))


def _xavier(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_denoiser(
    k: int,
    hidden: int = 1024,
    time_dim: int = 64,
    film_hidden: int = 16,
    seed: int = 0,
    dtype=np.float32,
) -> DenoiserParams:
    """Deterministically initialize parameters for a given seed.

    Trunk and projection weights are Xavier-uniform; biases and the FiLM
    output heads are zero, which forces gamma = beta = 0 at step 0.
    """
    if min(k, hidden, film_hidden) < 1:
        raise ValueError("k, hidden, and film_hidden must be positive")
    if time_dim < 2 or time_dim % 2:
        raise ValueError(f"time_dim must be even and >= 2, got {time_dim}")
    rng = np.random.default_rng(seed)
    zeros = lambda *shape: np.zeros(shape, dtype=dtype)
    # draw order is fixed; changing it would break bitwise reproducibility
    return DenoiserParams(
        k=k, hidden=hidden, time_dim=time_dim, film_hidden=film_hidden, seed=seed,
        film_f_w1=_xavier(rng, (film_hidden,), 1, film_hidden, dtype),
        film_f_b1=zeros(film_hidden),
        film_f_w2=zeros(film_hidden),
        film_f_b2=zeros(),
        film_h_w1=_xavier(rng, (film_hidden,), 1, film_hidden, dtype),
        film_h_b1=zeros(film_hidden),
        film_h_w2=zeros(film_hidden),
        film_h_b2=zeros(),
        time_w=_xavier(rng, (time_dim, time_dim), time_dim, time_dim, dtype),
        time_b=zeros(time_dim),
        trunk_w1=_xavier(rng, (hidden, k + time_dim), k + time_dim, hidden, dtype),
        trunk_b1=zeros(hidden),
        trunk_w2=_xavier(rng, (k, hidden), hidden, k, dtype),
        trunk_b2=zeros(k),
    )


def sinusoidal_time_features(t, time_dim: int) -> np.ndarray:
    """Sin/cos features of t over a geometric frequency ladder 1..MAX_TIME_FREQ.

    The ladder spans enough phase over t in [0, 1] that nearby instants stay
    distinguishable. Returns shape (..., time_dim).
    """
    t = np.asarray(t, dtype=np.float64)
    half = time_dim // 2
    exponents = np.arange(half) / max(half - 1, 1)
    freqs = MAX_TIME_FREQ ** exponents
    ang = np.multiply.outer(t, freqs)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _film_forward(x, w1, b1, w2, b2):
    # scalar net applied elementwise: y = w2 . tanh(x*w1 + b1) + b2
    u = x[..., None] * w1 + b1
    s = np.tanh(u)
    return s @ w2 + b2, s


def _forward(p: DenoiserParams, v_t, c_spec, t):
    gamma, s_f = _film_forward(c_spec, p.film_f_w1, p.film_f_b1, p.film_f_w2, p.film_f_b2)
    beta, s_h = _film_forward(c_spec, p.film_h_w1, p.film_h_b1, p.film_h_w2, p.film_h_b2)
    v_fused = v_t + gamma * c_spec + beta
    e_raw = sinusoidal_time_features(t, p.time_dim).astype(p.dtype)
    e = e_raw @ p.time_w.T + p.time_b
    z = np.concatenate([v_fused, e], axis=-1)
    a1 = z @ p.trunk_w1.T + p.trunk_b1
    h1 = np.tanh(a1)
    out = h1 @ p.trunk_w2.T + p.trunk_b2
    cache = (s_f, s_h, e_raw, z, h1)
    return out, cache


def _as_batch(p, v_t, c_spec, t):
    v_t = np.asarray(v_t, dtype=p.dtype)
    c_spec = np.asarray(c_spec, dtype=p.dtype)
    single = v_t.ndim == 1
    if single:
        v_t = v_t[None, :]
        c_spec = c_spec[None, :]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (v_t.shape[0],))
    if v_t.shape[-1] != p.k or c_spec.shape != v_t.shape:
        raise ValueError(
            f"expected matching (*, {p.k}) inputs, got {v_t.shape} and {c_spec.shape}"
        )
    if not (np.all(np.isfinite(v_t)) and np.all(np.isfinite(c_spec)) and np.all(np.isfinite(t))):
        raise ValueError("denoiser inputs contain non-finite values")
    return v_t, c_spec, t, single


def denoise(p: DenoiserParams, v_t, c_spec, t) -> np.ndarray:
    """Predict clean spectral coefficients from (v_t, condition, time).

    Pure function of the parameters and inputs; accepts a single coefficient
    vector or a batch of rows with per-row times.
    """
    v_t, c_spec, t, single = _as_batch(p, v_t, c_spec, t)
    out, _ = _forward(p, v_t, c_spec, t)
    return out[0] if single else out


def loss_and_grad(p: DenoiserParams, v_t, c_spec, t, target):
    """Mean per-example squared-error loss and exact parameter gradients.

    The backward pass is analytic through the trunk, the time projection,
    and both FiLM gate networks. Raises on an empty batch or a non-finite
    forward value.
    """
    v_t, c_spec, t, _ = _as_batch(p, v_t, c_spec, t)
    target = np.asarray(target, dtype=p.dtype)
    if target.ndim == 1:
        target = target[None, :]
    if target.shape != v_t.shape:
        raise ValueError(f"target shape {target.shape} does not match batch {v_t.shape}")
    b = v_t.shape[0]
    if b == 0:
        raise ValueError("empty batch")

    out, (s_f, s_h, e_raw, z, h1) = _forward(p, v_t, c_spec, t)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite forward values (diverged parameters?)")
    diff = out - target
    loss = float(np.sum(diff * diff) / b)

    g_out = (2.0 / b) * diff
    g = {
        "trunk_w2": g_out.T @ h1,
        "trunk_b2": g_out.sum(axis=0),
    }
    g_h1 = g_out @ p.trunk_w2
    g_a1 = g_h1 * (1.0 - h1 * h1)
    g["trunk_w1"] = g_a1.T @ z
    g["trunk_b1"] = g_a1.sum(axis=0)
    g_z = g_a1 @ p.trunk_w1
    g_vf = g_z[:, :p.k]
    g_e = g_z[:, p.k:]
    g["time_w"] = g_e.T @ e_raw
    g["time_b"] = g_e.sum(axis=0)

    def film_grads(g_y, s, w2, x):
        gw2 = np.einsum("bk,bkw->w", g_y, s)
        gb2 = np.asarray(g_y.sum(), dtype=p.dtype)
        tmp = g_y[..., None] * (w2 * (1.0 - s * s))
        gw1 = np.einsum("bkw,bk->w", tmp, x)
        gb1 = tmp.sum(axis=(0, 1))
        return gw1, gb1, gw2, gb2

    g_gamma = g_vf * c_spec
    g_beta = g_vf
    g["film_f_w1"], g["film_f_b1"], g["film_f_w2"], g["film_f_b2"] = film_grads(
        g_gamma, s_f, p.film_f_w2, c_spec)
    g["film_h_w1"], g["film_h_b1"], g["film_h_w2"], g["film_h_b2"] = film_grads(
        g_beta, s_h, p.film_h_w2, c_spec)
    return loss, g


@dataclass
class AdamState:
    """First/second moment accumulators plus the hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def init(cls, p: DenoiserParams, lr: float = 1e-4,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={n: np.zeros_like(a) for n, a in p.arrays().items()},
            v={n: np.zeros_like(a) for n, a in p.arrays().items()},
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(p: DenoiserParams, grads: dict, state: AdamState):
    """Bias-corrected Adam update without weight decay (in place)."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, arr in p.arrays().items():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient {name} has shape {g.shape}, expected {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        arr -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return p, state


def save_checkpoint(p: DenoiserParams, path, step_count: int = 0,
                    adam: AdamState | None = None) -> None:
    """Serialize parameters (and optionally optimizer state) as f32."""
    basis_hash = p.basis_hash or "0" * 64
    header = _CKPT_MAGIC + struct.pack(
        "<IIIIIQB", _CKPT_VERSION, p.k, p.hidden, p.time_dim, p.film_hidden,
        int(step_count), 1 if adam is not None else 0,
    ) + bytes.fromhex(basis_hash)
    chunks = [header]
    for name in PARAM_FIELDS:
        chunks.append(np.asarray(getattr(p, name), dtype="<f4").tobytes())
    if adam is not None:
        chunks.append(struct.pack("<Qdddd", adam.step, adam.lr, adam.beta1,
                                  adam.beta2, adam.eps))
        for name in PARAM_FIELDS:
            chunks.append(np.asarray(adam.m[name], dtype="<f4").tobytes())
        for name in PARAM_FIELDS:
            chunks.append(np.asarray(adam.v[name], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Load a checkpoint; returns (params, step_count, adam_or_None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise ArtifactError(f"{path}: not a denoiser checkpoint")
    version, k, hidden, time_dim, film_hidden, step_count, has_adam = struct.unpack_from(
        "<IIIIIQB", blob, 8)
    if version != _CKPT_VERSION:
        raise ArtifactError(f"{path}: unsupported checkpoint version {version}")
    off = 8 + struct.calcsize("<IIIIIQB")
    basis_hash = blob[off:off + 32].hex()
    off += 32

    shapes = _parameter_shapes(k, hidden, time_dim, film_hidden)

    def read_group():
        nonlocal off
        group = {}
        for name in PARAM_FIELDS:
            shape = shapes[name]
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            # astype(copy=True) so arrays are writable (frombuffer is read-only)
            group[name] = arr.reshape(shape).astype(np.float32, copy=True)
        return group

    values = read_group()
    p = DenoiserParams(
        k=k, hidden=hidden, time_dim=time_dim, film_hidden=film_hidden, seed=-1,
        basis_hash=None if basis_hash == "0" * 64 else basis_hash, **values,
    )
    adam = None
    if has_adam:
        step, lr, beta1, beta2, eps = struct.unpack_from("<Qdddd", blob, off)
        off += struct.calcsize("<Qdddd")
        adam = AdamState(m=read_group(), v=read_group(), step=step,
                         lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    return p, step_count, adam


def _parameter_shapes(k, hidden, time_dim, film_hidden):
    w = film_hidden
    return {
        "film_f_w1": (w,), "film_f_b1": (w,), "film_f_w2": (w,), "film_f_b2": (),
        "film_h_w1": (w,), "film_h_b1": (w,), "film_h_w2": (w,), "film_h_b2": (),
        "time_w": (time_dim, time_dim), "time_b": (time_dim,),
        "trunk_w1": (hidden, k + time_dim), "trunk_b1": (hidden,),
        "trunk_w2": (k, hidden), "trunk_b2": (k,),
    }
