"""Dual-branch, dual-head trajectory surrogate with hand-written backprop.

Architecture::

    GRU over normalized (theta_s, c_noisy_s), s = 0..t   -> h_t      (H)
    tanh(affine(tanh(affine(c_noisy_t))))                -> a_t      (W)
    tanh(affine([h_t, a_t]))                             -> f_t      (F)
    affine(f_t) -> C_hat(theta_t)      affine(f_t) -> theta_hat_{t+1}

The surrogate gradient ``dC_hat/dtheta_t`` is a symmetric finite difference on
the normalized final theta input.  Training differentiates the loss, including
those finite-difference passes, with ordinary first-order reverse mode.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import substream

CHECKPOINT_VERSION = 1

GRU_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")
PARAM_KEYS = GRU_KEYS + ("S1", "s1", "S2", "s2", "Fw", "fb", "Vw", "vb", "Tw", "tb")


class NumericError(FloatingPointError):
    """Non-finite activations or loss."""


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    theta: np.ndarray
    c_noisy: float
    c_zne: float
    g_zne: np.ndarray
    theta_next: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    epochs: int = 3000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fd_step: float = 1e-3
    seed: int = 0
    hidden: int = 64
    scalar_width: int = 64
    fusion: int = 64
    window: int | None = None
    gru_uses_cost: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class Affine:
    """Maps ``[lo, hi]`` onto ``[-1, 1]`` elementwise."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, margin: float = 0.1) -> "Affine":
        values = np.asarray(values, dtype=float)
        lo = values.min(axis=0)
        hi = values.max(axis=0)
        span = hi - lo
        span = np.where(span > 1e-12, span, 1.0)
        return cls(np.atleast_1d(lo - margin * span), np.atleast_1d(hi + margin * span))

    @property
    def half_span(self) -> np.ndarray:
        return (self.hi - self.lo) / 2.0

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.half_span - 1.0

    def denormalize(self, y):
        return (np.asarray(y, dtype=float) + 1.0) * self.half_span + self.lo


def _identity_affine(d: int) -> Affine:
    return Affine(-np.ones(d), np.ones(d))


@dataclass
class SurrogateModel:
    n_params: int
    hidden: int
    scalar_width: int
    fusion: int
    params: dict[str, np.ndarray]
    theta_norm: Affine
    c_in_norm: Affine
    c_out_norm: Affine
    fd_step: float = 1e-3
    window: int | None = None
    gru_uses_cost: bool = True
    fitted: bool = field(default=False)

    @property
    def input_size(self) -> int:
        return self.n_params + (1 if self.gru_uses_cost else 0)

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(
            self.n_params, self.hidden, self.scalar_width, self.fusion,
            {k: v.copy() for k, v in self.params.items()},
            Affine(self.theta_norm.lo.copy(), self.theta_norm.hi.copy()),
            Affine(self.c_in_norm.lo.copy(), self.c_in_norm.hi.copy()),
            Affine(self.c_out_norm.lo.copy(), self.c_out_norm.hi.copy()),
            self.fd_step, self.window, self.gru_uses_cost, self.fitted,
        )


def param_shapes(n_params: int, hidden: int, width: int, fusion: int, input_size: int) -> dict[str, tuple]:
    H, W, F, d, i = hidden, width, fusion, n_params, input_size
    return {
        "Wz": (i, H), "Uz": (H, H), "bz": (H,),
        "Wr": (i, H), "Ur": (H, H), "br": (H,),
        "Wn": (i, H), "Un": (H, H), "bn": (H,),
        "S1": (1, W), "s1": (W,), "S2": (W, W), "s2": (W,),
        "Fw": (H + W, F), "fb": (F,),
        "Vw": (F, 1), "vb": (1,),
        "Tw": (F, d), "tb": (d,),
    }


def init_model(n_params: int, cfg: TrainConfig = TrainConfig()) -> SurrogateModel:
    """Xavier-uniform weights, zero biases, identity normalization until fitted."""
    input_size = n_params + (1 if cfg.gru_uses_cost else 0)
    rng = substream(cfg.seed, "weights")
    params = {}
    for name, shape in param_shapes(n_params, cfg.hidden, cfg.scalar_width, cfg.fusion, input_size).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return SurrogateModel(
        n_params, cfg.hidden, cfg.scalar_width, cfg.fusion, params,
        _identity_affine(n_params), _identity_affine(1), _identity_affine(1),
        cfg.fd_step, cfg.window, cfg.gru_uses_cost,
    )


def fit_normalization(model: SurrogateModel, records: Sequence[TrajectoryRecord]) -> None:
    thetas = np.array([r.theta for r in records] + [r.theta_next for r in records])
    model.theta_norm = Affine.fit(thetas)
    model.c_in_norm = Affine.fit(np.array([[r.c_noisy] for r in records]))
    model.c_out_norm = Affine.fit(np.array([[r.c_zne] for r in records]))
    model.fitted = True


# --- network pieces -----------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_step(p, x, h):
    z = _sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
    r = _sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
    rh = r * h
    n = np.tanh(x @ p["Wn"] + rh @ p["Un"] + p["bn"])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, rh, n)


def _gru_step_back(p, cache, dh_new, grads):
    x, h, z, r, rh, n = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    grads["Wn"] += x.T @ dan
    grads["Un"] += rh.T @ dan
    grads["bn"] += dan.sum(0)
    drh = dan @ p["Un"].T
    dr = drh * h
    dh += drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    grads["Wz"] += x.T @ daz
    grads["Uz"] += h.T @ daz
    grads["bz"] += daz.sum(0)
    grads["Wr"] += x.T @ dar
    grads["Ur"] += h.T @ dar
    grads["br"] += dar.sum(0)
    dh += daz @ p["Uz"].T + dar @ p["Ur"].T
    dx = daz @ p["Wz"].T + dar @ p["Wr"].T + dan @ p["Wn"].T
    return dh, dx


def _encode_inputs(model: SurrogateModel, thetas: np.ndarray, costs: np.ndarray) -> np.ndarray:
    tn = model.theta_norm.normalize(thetas)
    if not model.gru_uses_cost:
        return tn
    cn = model.c_in_norm.normalize(costs[:, None])
    return np.concatenate([tn, cn], axis=1)


@dataclass
class _Batch:
    """Right-aligned prefixes for ``R`` records, last step split out."""

    seq: np.ndarray  # (R, L-1, in) history steps (excluding the final one)
    mask: np.ndarray  # (R, L-1) 1 where the step belongs to the prefix
    last: np.ndarray  # (R, in) final input
    c_last: np.ndarray  # (R,) normalized c_noisy of the final step


def _make_batch(model: SurrogateModel, prefixes: Sequence[tuple[np.ndarray, np.ndarray]]) -> _Batch:
    encoded = []
    for thetas, costs in prefixes:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        costs = np.atleast_1d(np.asarray(costs, dtype=float))
        if thetas.shape[0] == 0 or thetas.shape[0] != costs.shape[0]:
            raise ValueError("prefix needs matching, non-empty theta and cost sequences")
        if thetas.shape[1] != model.n_params:
            raise ValueError(f"theta dimension {thetas.shape[1]} != {model.n_params}")
        if model.window is not None:
            thetas, costs = thetas[-model.window :], costs[-model.window :]
        encoded.append((_encode_inputs(model, thetas, costs), model.c_in_norm.normalize(costs[-1:])[0]))
    R = len(encoded)
    L1 = max(e.shape[0] for e, _ in encoded) - 1
    seq = np.zeros((R, L1, model.input_size))
    mask = np.zeros((R, L1))
    last = np.zeros((R, model.input_size))
    c_last = np.zeros(R)
    for i, (e, c) in enumerate(encoded):
        k = e.shape[0] - 1
        if k:
            seq[i, L1 - k :] = e[:-1]
            mask[i, L1 - k :] = 1.0
        last[i] = e[-1]
        c_last[i] = c
    return _Batch(seq, mask, last, c_last)


def _variants(model: SurrogateModel, last: np.ndarray, with_fd: bool) -> np.ndarray:
    """Final inputs: unperturbed, then +h and -h on each theta coordinate."""
    if not with_fd:
        return last[:, None, :]
    d, h = model.n_params, model.fd_step
    V = 1 + 2 * d
    out = np.repeat(last[:, None, :], V, axis=1)
    for j in range(d):
        out[:, 1 + 2 * j, j] += h
        out[:, 2 + 2 * j, j] -= h
    return out


def _forward(model: SurrogateModel, batch: _Batch, with_fd: bool):
    """Normalized value outputs ``(R, V)``, theta-head outputs ``(R, d)`` and caches."""
    p = model.params
    R = batch.last.shape[0]
    h = np.zeros((R, model.hidden))
    chain = []
    for s in range(batch.seq.shape[1]):
        h_new, cache = _gru_step(p, batch.seq[:, s], h)
        m = batch.mask[:, s : s + 1]
        chain.append((cache, m))
        h = m * h_new + (1.0 - m) * h
    xv = _variants(model, batch.last, with_fd)
    V = xv.shape[1]
    h_rep = np.repeat(h, V, axis=0)
    h_last, last_cache = _gru_step(p, xv.reshape(R * V, -1), h_rep)

    a1 = np.tanh(batch.c_last[:, None] @ p["S1"] + p["s1"])
    a2 = np.tanh(a1 @ p["S2"] + p["s2"])
    a2_rep = np.repeat(a2, V, axis=0)
    u = np.concatenate([h_last, a2_rep], axis=1)
    f = np.tanh(u @ p["Fw"] + p["fb"])
    v = (f @ p["Vw"] + p["vb"]).reshape(R, V)
    f0 = f.reshape(R, V, -1)[:, 0]
    th = f0 @ p["Tw"] + p["tb"]
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(th))):
        raise NumericError("non-finite surrogate activations")
    caches = dict(chain=chain, last=last_cache, a1=a1, a2=a2, u=u, f=f, V=V, R=R, c_last=batch.c_last)
    return v, th, caches


def _backward(model: SurrogateModel, caches, dv: np.ndarray, dth: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    R, V = caches["R"], caches["V"]
    f, u = caches["f"], caches["u"]
    dth_full = np.zeros((R, V, model.n_params))
    dth_full[:, 0] = dth
    dth_full = dth_full.reshape(R * V, -1)
    dv_flat = dv.reshape(R * V, 1)
    grads["Vw"] += f.T @ dv_flat
    grads["vb"] += dv_flat.sum(0)
    grads["Tw"] += f.T @ dth_full
    grads["tb"] += dth_full.sum(0)
    df = dv_flat @ p["Vw"].T + dth_full @ p["Tw"].T
    da = df * (1.0 - f * f)
    grads["Fw"] += u.T @ da
    grads["fb"] += da.sum(0)
    du = da @ p["Fw"].T
    H = model.hidden
    dh_last = du[:, :H]
    da2 = du[:, H:].reshape(R, V, -1).sum(axis=1)

    a1, a2 = caches["a1"], caches["a2"]
    dz2 = da2 * (1.0 - a2 * a2)
    grads["S2"] += a1.T @ dz2
    grads["s2"] += dz2.sum(0)
    dz1 = (dz2 @ p["S2"].T) * (1.0 - a1 * a1)
    grads["S1"] += caches["c_last"][:, None].T @ dz1
    grads["s1"] += dz1.sum(0)

    dh_rep, _ = _gru_step_back(p, caches["last"], dh_last, grads)
    dh = dh_rep.reshape(R, V, -1).sum(axis=1)
    for cache, m in reversed(caches["chain"]):
        dh_prev, _ = _gru_step_back(p, cache, m * dh, grads)
        dh = dh_prev + (1.0 - m) * dh
    return grads


# --- public API ---------------------------------------------------------------


def _prefix_arrays(prefix) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(prefix, tuple) and len(prefix) == 2 and np.ndim(prefix[1]) == 1:
        return np.atleast_2d(prefix[0]), np.asarray(prefix[1], dtype=float)
    thetas = np.array([np.asarray(t, dtype=float) for t, _ in prefix])
    costs = np.array([float(c) for _, c in prefix])
    return thetas, costs


def forward(model: SurrogateModel, prefix) -> tuple[float, np.ndarray]:
    """``(C_hat(theta_t), theta_hat_{t+1})`` for one trajectory prefix.

    ``prefix`` is either a list of ``(theta, c_noisy)`` pairs or a tuple of
    arrays ``(thetas (t+1, d), costs (t+1,))``.
    """
    batch = _make_batch(model, [_prefix_arrays(prefix)])
    v, th, _ = _forward(model, batch, with_fd=False)
    c_hat = float(model.c_out_norm.denormalize(v[0, 0])[0])
    return c_hat, model.theta_norm.denormalize(th[0])


def _fd_gradients(model: SurrogateModel, v: np.ndarray) -> np.ndarray:
    """Raw-unit ``dC_hat/dtheta_t`` from the +/-h value outputs, shape ``(R, d)``."""
    d, h = model.n_params, model.fd_step
    vp = v[:, 1 : 1 + 2 * d : 2]
    vm = v[:, 2 : 2 + 2 * d : 2]
    scale = model.c_out_norm.half_span[0] / (2.0 * h) / model.theta_norm.half_span
    return (vp - vm) * scale


def input_gradient(model: SurrogateModel, prefix) -> np.ndarray:
    """Finite-difference ``dC_hat / dtheta_t`` (2 * n_params extra forward passes)."""
    batch = _make_batch(model, [_prefix_arrays(prefix)])
    v, _, _ = _forward(model, batch, with_fd=True)
    return _fd_gradients(model, v)[0]


def _record_prefixes(records: Sequence[TrajectoryRecord]):
    thetas = np.array([r.theta for r in records])
    costs = np.array([r.c_noisy for r in records])
    return [(thetas[: t + 1], costs[: t + 1]) for t in range(len(records))]


def _loss_terms(model: SurrogateModel, records: Sequence[TrajectoryRecord], beta: float, need_grads: bool):
    if not records:
        raise ValueError("empty batch")
    batch = _make_batch(model, _record_prefixes(records))
    v, th, caches = _forward(model, batch, with_fd=True)
    T = len(records)
    c_zne = np.array([r.c_zne for r in records])
    theta_next = np.array([r.theta_next for r in records])
    g_zne = np.array([r.g_zne for r in records])
    if theta_next.shape[1] != model.n_params or g_zne.shape[1] != model.n_params:
        raise ValueError("record vectors do not match n_params")

    c_scale = model.c_out_norm.half_span[0]
    t_scale = model.theta_norm.half_span
    c_hat = model.c_out_norm.denormalize(v[:, 0])
    th_hat = model.theta_norm.denormalize(th)
    grad_hat = _fd_gradients(model, v)
    ec = c_hat - c_zne
    et = th_hat - theta_next
    eg = grad_hat - g_zne
    l_data = float(np.mean(ec**2 + np.sum(et**2, axis=1)))
    l_phys = float(np.mean(np.sum(eg**2, axis=1)))
    total = l_data + beta * l_phys
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss (data={l_data}, phys={l_phys})")
    if not need_grads:
        return total, l_data, l_phys, None

    d, h = model.n_params, model.fd_step
    dv = np.zeros_like(v)
    dv[:, 0] = 2.0 * ec / T * c_scale
    fd_scale = c_scale / (2.0 * h) / t_scale
    dgrad = beta * 2.0 * eg / T * fd_scale
    dv[:, 1 : 1 + 2 * d : 2] += dgrad
    dv[:, 2 : 2 + 2 * d : 2] -= dgrad
    dth = 2.0 * et / T * t_scale
    grads = _backward(model, caches, dv, dth)
    return total, l_data, l_phys, grads


def loss(model: SurrogateModel, records: Sequence[TrajectoryRecord], beta: float) -> tuple[float, float, float]:
    """``(L_data + beta * L_phys, L_data, L_phys)``; record ``t`` sees records ``0..t`` as its prefix."""
    total, l_data, l_phys, _ = _loss_terms(model, records, beta, need_grads=False)
    return total, l_data, l_phys


def loss_and_grads(model: SurrogateModel, records: Sequence[TrajectoryRecord], beta: float):
    return _loss_terms(model, records, beta, need_grads=True)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainResult:
    model: SurrogateModel
    loss_curve: list[tuple[float, float, float]]


def train(model: SurrogateModel, dataset: Sequence[TrajectoryRecord], cfg: TrainConfig, fit_norm: bool = True) -> TrainResult:
    """Full-batch Adam on ``L_data + beta * L_phys``; the input model is not modified."""
    if len(dataset) < 2:
        raise ValueError("need at least two trajectory records")
    model = model.copy()
    if fit_norm:
        fit_normalization(model, dataset)
    model.fd_step = cfg.fd_step
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    curve = []
    for _ in range(cfg.epochs):
        total, l_data, l_phys, grads = loss_and_grads(model, dataset, cfg.beta)
        curve.append((total, l_data, l_phys))
        opt.step(model.params, grads)
    return TrainResult(model, curve)


def surrogate_step(model: SurrogateModel, prefix, eta: float, mode: str = "gradient") -> np.ndarray:
    """Next parameters from the surrogate: gradient descent on ``C_hat`` or the theta head."""
    thetas, costs = _prefix_arrays(prefix)
    if mode == "gradient":
        return thetas[-1] - eta * input_gradient(model, (thetas, costs))
    if mode == "head":
        return forward(model, (thetas, costs))[1]
    raise ValueError(f"unknown surrogate step mode {mode!r}")


# --- checkpoints --------------------------------------------------------------


def save_model(model: SurrogateModel, path: str | Path) -> None:
    meta = dict(
        version=CHECKPOINT_VERSION, n_params=model.n_params, hidden=model.hidden,
        scalar_width=model.scalar_width, fusion=model.fusion, fd_step=model.fd_step,
        window=model.window, gru_uses_cost=model.gru_uses_cost, fitted=model.fitted,
    )
    arrays = {f"p_{k}": v for k, v in model.params.items()}
    for name in ("theta_norm", "c_in_norm", "c_out_norm"):
        aff = getattr(model, name)
        arrays[f"{name}_lo"] = aff.lo
        arrays[f"{name}_hi"] = aff.hi
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    # fixed timestamps keep checkpoints byte-reproducible
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_model(path: str | Path) -> SurrogateModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[f"p_{k}"].copy() for k in PARAM_KEYS}
        norms = {
            name: Affine(data[f"{name}_lo"].copy(), data[f"{name}_hi"].copy())
            for name in ("theta_norm", "c_in_norm", "c_out_norm")
        }
    return SurrogateModel(
        meta["n_params"], meta["hidden"], meta["scalar_width"], meta["fusion"], params,
        norms["theta_norm"], norms["c_in_norm"], norms["c_out_norm"],
        meta["fd_step"], meta["window"], meta["gru_uses_cost"], meta["fitted"],
    )


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
