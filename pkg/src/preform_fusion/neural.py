"""Dense feed-forward regressor with optional residual blocks, written in numpy.

Layout: input -> dense(w0, act) -> [dense(w, act) (+ skip)] * k -> dense(32, linear).
With ``skip_connections`` every hidden layer after the first is a residual
block ``h <- act(h W + b) + h``; the first layer projects the input to the
block width so the additions are shape-valid.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import N_TARGETS, Dataset
from .metrics import compute_metrics

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
OPTIMIZERS = ("adam", "sgd")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        super().__init__(
            f"training loss became non-finite in epoch {epoch}; "
            f"last finite epoch was {last_finite_epoch}"
        )
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    output_dim: int = N_TARGETS
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    skip_connections: bool = True
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.output_dim != N_TARGETS:
            raise ValueError(f"output_dim must be {N_TARGETS}")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("need at least one hidden layer, all widths >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.skip_connections and len(set(self.hidden_widths)) != 1:
            raise ValueError("residual blocks require equal hidden widths")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim,) + self.hidden_widths + (self.output_dim,)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "hidden_widths": tuple(d["hidden_widths"])})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    validation_fraction: float = 0.15
    seed: int = 0
    patience: int = 50

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class Scaler:
    """Per-feature affine map ``(x - shift) / scale``."""

    kind: str
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, kind: str) -> "Scaler":
        x = np.asarray(x, dtype=float)
        if kind == "minmax":
            shift, scale = x.min(axis=0), x.max(axis=0) - x.min(axis=0)
        elif kind == "zscore":
            shift, scale = x.mean(axis=0), x.std(axis=0)
        else:
            raise ValueError(f"unknown scaler kind {kind!r}")
        # constant columns map to zero rather than dividing by zero
        scale = np.where(scale > 0, scale, 1.0)
        return cls(kind, shift, scale)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        shift = np.array(d["shift"], dtype=float)
        scale = np.array(d["scale"], dtype=float)
        if shift.shape != scale.shape or np.any(scale == 0):
            raise ValueError("invalid scaler parameters")
        return cls(d["kind"], shift, scale)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    config: ModelConfig
    params: list  # [W0, b0, W1, b1, ...]
    input_names: tuple[str, ...]
    input_scaler: Scaler
    output_scaler: Scaler
    provenance: dict = field(default_factory=dict)

    def predict(self, x) -> np.ndarray:
        """Map raw inputs (n, input_dim) to temperatures in °C, shape (n, 32)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input has {x.shape[1]} features, model expects {self.config.input_dim}"
            )
        z = _forward(self.params, self.input_scaler.transform(x), self.config)[0]
        out = self.output_scaler.inverse(z)
        return out[0] if single else out

    def predict_dataset(self, data: Dataset) -> np.ndarray:
        return self.predict(data.columns(self.input_names))

    @property
    def label(self) -> str:
        return self.provenance.get("label", "")


def forward(model: TrainedModel, x) -> np.ndarray:
    """Temperature field (°C) predicted for one feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    return model.predict(x)


def init_params(config: ModelConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(config.init_seed)
    params = []
    shapes = config.layer_shapes
    for i, (fan_in, fan_out) in enumerate(shapes):
        last = i == len(shapes) - 1
        if last or config.activation == "tanh":
            std = np.sqrt(1.0 / fan_in)
        else:
            std = np.sqrt(2.0 / fan_in)
        params.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _forward(params, x, config: ModelConfig):
    n_hidden = len(config.hidden_widths)
    cache = []
    h = x
    for i in range(n_hidden):
        W, b = params[2 * i], params[2 * i + 1]
        z = h @ W + b
        a = _act(z, config.activation)
        cache.append((h, z, a))
        h = a + h if (config.skip_connections and i > 0) else a
    W, b = params[-2], params[-1]
    cache.append((h, None, None))
    return h @ W + b, cache


def _backward(params, cache, d_out, config: ModelConfig):
    grads = [None] * len(params)
    h_last = cache[-1][0]
    grads[-2] = h_last.T @ d_out
    grads[-1] = d_out.sum(axis=0)
    dh = d_out @ params[-2].T
    for i in reversed(range(len(config.hidden_widths))):
        h_in, z, a = cache[i]
        dz = dh * _act_grad(z, a, config.activation)
        grads[2 * i] = h_in.T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i == 0:
            break
        dh_in = dz @ params[2 * i].T
        if config.skip_connections:
            dh_in = dh_in + dh
        dh = dh_in
    return grads


def mse_loss_and_grad(params, x, y, config: ModelConfig):
    """Mean squared error over all entries and its gradient for every parameter."""
    out, cache = _forward(params, x, config)
    diff = out - y
    loss = float(np.mean(diff * diff))
    d_out = 2.0 * diff / diff.size
    return loss, _backward(params, cache, d_out, config)


def gradient_check(config: ModelConfig, x, y, params=None, step: float = 1e-5) -> float:
    """Largest discrepancy between backprop and central finite differences.

    The discrepancy per parameter is ``|g - fd| / max(|g|, |fd|, 1e-5)``, i.e.
    relative for ordinary gradients and absolute below 1e-5 where round-off in
    the difference quotient dominates.
    """
    if config.n_params > 10_000:
        raise ValueError("gradient_check is meant for networks with <= 1e4 parameters")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    params = [p.copy() for p in (params if params is not None else init_params(config))]
    _, grads = mse_loss_and_grad(params, x, y, config)
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = mse_loss_and_grad(params, x, y, config)[0]
            flat[j] = orig - step
            down = mse_loss_and_grad(params, x, y, config)[0]
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(gflat[j] - fd) / max(abs(gflat[j]), abs(fd), 1e-5)
            worst = max(worst, err)
    return worst


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)  # MSE in scaled target space
    val_rmse: list = field(default_factory=list)  # °C
    val_r2: list = field(default_factory=list)
    best_epoch: int = 0  # 0 means the initial weights were never improved on

    def __len__(self) -> int:
        return len(self.train_loss)

    def epochs_to_r2(self, threshold: float):
        """First (1-based) epoch whose validation R² reaches ``threshold``, else None."""
        for i, r2 in enumerate(self.val_r2):
            if r2 is not None and r2 >= threshold:
                return i + 1
        return None

    def to_dict(self) -> dict:
        return {
            "train_loss": list(self.train_loss),
            "val_rmse": list(self.val_rmse),
            "val_r2": list(self.val_r2),
            "best_epoch": self.best_epoch,
        }


def split_indices(n: int, fraction: float, seed: int):
    """Seeded shuffle into (train, validation) index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val >= n:
        # too small to hold data out: validate on the training rows
        return np.sort(perm), np.sort(perm)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit(model: TrainedModel, data: Dataset, tc: TrainConfig, *,
        refit_input_scaler: bool = True, refit_output_scaler: bool = True,
        lr_scale: float = 1.0) -> tuple[TrainedModel, TrainingHistory]:
    """Continue training ``model`` on ``data``; returns the best-validation weights."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    x_all = data.columns(model.input_names)
    y_all = data.targets
    tr, va = split_indices(len(data), tc.validation_fraction, tc.seed)
    in_scaler = Scaler.fit(x_all[tr], "minmax") if refit_input_scaler else model.input_scaler
    out_scaler = Scaler.fit(y_all[tr], "zscore") if refit_output_scaler else model.output_scaler
    x_tr, y_tr = in_scaler.transform(x_all[tr]), out_scaler.transform(y_all[tr])
    x_va, y_va_raw = in_scaler.transform(x_all[va]), y_all[va]
    config = model.config
    params = [p.copy() for p in model.params]
    history = TrainingHistory()

    def val_rmse(ps):
        pred = out_scaler.inverse(_forward(ps, x_va, config)[0])
        return compute_metrics(pred, y_va_raw)

    if tc.epochs > 0 and tc.batch_size > len(tr):
        raise ValueError(f"batch_size {tc.batch_size} exceeds training rows {len(tr)}")

    best = [p.copy() for p in params]
    best_rmse = val_rmse(params).rmse
    lr = tc.learning_rate * lr_scale
    opt = _Adam(params, lr) if tc.optimizer == "adam" else _SGD(params, lr)
    rng = np.random.default_rng([tc.seed, 1])
    since_best = 0
    n = len(tr)
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            loss, grads = mse_loss_and_grad(params, x_tr[idx], y_tr[idx], config)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, epoch - 1)
            total += loss * len(idx)
            opt.step(params, grads)
        m = val_rmse(params)
        if not np.isfinite(m.rmse):
            raise TrainingDivergedError(epoch, epoch - 1)
        history.train_loss.append(total / n)
        history.val_rmse.append(m.rmse)
        history.val_r2.append(m.r2)
        if m.rmse < best_rmse:
            best_rmse = m.rmse
            best = [p.copy() for p in params]
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= tc.patience:
                log.debug("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    trained = TrainedModel(config, best, model.input_names, in_scaler, out_scaler,
                           copy.deepcopy(model.provenance))
    return trained, history


def new_model(config: ModelConfig, input_names: Sequence[str], provenance: dict | None = None,
              data: Dataset | None = None) -> TrainedModel:
    """Freshly initialised model; scalers are fitted on ``data`` when given."""
    input_names = tuple(input_names)
    if len(input_names) != config.input_dim:
        raise ValueError(f"{len(input_names)} input names for input_dim {config.input_dim}")
    if data is not None:
        x_in, y = data.columns(input_names), data.targets
    else:
        x_in, y = np.zeros((1, config.input_dim)), np.zeros((1, N_TARGETS))
    return TrainedModel(
        config, init_params(config), input_names,
        Scaler.fit(x_in, "minmax"), Scaler.fit(y, "zscore"), dict(provenance or {}),
    )


def train(config: ModelConfig, data: Dataset, tc: TrainConfig,
          input_names: Sequence[str] | None = None,
          label: str = "", descriptor: dict | None = None) -> tuple[TrainedModel, TrainingHistory]:
    """Train a model from scratch on ``data``.

    ``input_names`` selects the feature columns (all columns by default).
    Scalers are fitted on the training split only.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    input_names = tuple(input_names or data.input_names)
    if len(input_names) != config.input_dim:
        raise ValueError(
            f"config.input_dim={config.input_dim} but {len(input_names)} input columns selected"
        )
    prov = {"label": label, "parent": None, "chain": [label], "descriptor": descriptor}
    tr, _ = split_indices(len(data), tc.validation_fraction, tc.seed)
    model = new_model(config, input_names, prov, data.rows(tr))
    return fit(model, data, tc)


def with_provenance(model: TrainedModel, **updates) -> TrainedModel:
    return replace(model, provenance={**model.provenance, **updates})
