"""Feedforward MPP estimators trained with Levenberg-Marquardt.

Two small networks map (irradiance, cell temperature) to the MPP voltage
and the MPP current. Inputs and targets are min-max scaled to [-1, 1] with
constants fitted on the training split only; hidden units use tanh and the
output is linear.

Parameters are handled as one flat vector in the order
W_1 (row-major), b_1, W_2, b_2, ... so that the Jacobian columns line up
with :meth:`MlpNetwork.get_params`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import TrainingDiverged
from .pv_model import EnvConditions, PanelParams, mpp_oracle

FORMAT_NAME = "pvmppt-mlp"
FORMAT_VERSION = 1
EXTRAPOLATION_MARGIN = 0.2
LAMBDA_MAX = 1e10


class NotTrained(TrainingDiverged):
    """Training was asked to run zero epochs."""


class Prediction(NamedTuple):
    value: float
    extrapolated: bool


class MppEstimate(NamedTuple):
    v_mpp: float
    i_mpp: float
    extrapolated: bool


@dataclass
class MlpNetwork:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float = -1.0
    y_max: float = 1.0
    target: str = ""

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int] = (2, 10, 1), seed: int = 42, target: str = "") -> "MlpNetwork":
        """Uniform +-1/sqrt(fan_in) weights, zero biases, identity scaling."""
        rng = np.random.default_rng(seed)
        sizes = [int(n) for n in layer_sizes]
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(sizes, weights, biases, -np.ones(sizes[0]), np.ones(sizes[0]), -1.0, 1.0, target)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_params(self, theta: np.ndarray) -> None:
        k = 0
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[idx] = theta[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[idx] = theta[k : k + b.size].copy()
            k += b.size

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.x_min.copy(),
            self.x_max.copy(),
            self.y_min,
            self.y_max,
            self.target,
        )

    # scaling -----------------------------------------------------------

    def fit_scaling(self, x: np.ndarray, y: np.ndarray) -> None:
        self.x_min, self.x_max = x.min(axis=0).astype(float), x.max(axis=0).astype(float)
        self.y_min, self.y_max = float(y.min()), float(y.max())

    def scale_x(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.x_max > self.x_min, self.x_max - self.x_min, 1.0)
        return 2.0 * (x - self.x_min) / span - 1.0

    def scale_y(self, y):
        span = self.y_max - self.y_min if self.y_max > self.y_min else 1.0
        return 2.0 * (y - self.y_min) / span - 1.0

    def unscale_y(self, y_n):
        span = self.y_max - self.y_min if self.y_max > self.y_min else 1.0
        return (np.asarray(y_n) + 1.0) * 0.5 * span + self.y_min

    # evaluation --------------------------------------------------------

    def forward_normalized(self, x_n: np.ndarray) -> np.ndarray:
        """Network output for already-scaled inputs of shape (n, n_in)."""
        a = np.atleast_2d(x_n)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w.T + b)
        return (a @ self.weights[-1].T + self.biases[-1])[:, 0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Denormalized predictions for raw inputs of shape (n, n_in)."""
        return self.unscale_y(self.forward_normalized(self.scale_x(np.atleast_2d(x))))

    def is_extrapolating(self, x: np.ndarray) -> bool:
        span = self.x_max - self.x_min
        lo, hi = self.x_min - EXTRAPOLATION_MARGIN * span, self.x_max + EXTRAPOLATION_MARGIN * span
        x = np.atleast_2d(x)
        return bool(np.any(x < lo) or np.any(x > hi))

    # persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "target": self.target,
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": "tanh",
            "output_activation": "identity",
            "input_min": [float(v) for v in self.x_min],
            "input_max": [float(v) for v in self.x_max],
            "output_min": float(self.y_min),
            "output_max": float(self.y_max),
            "weights": [[float(v) for v in w.ravel()] for w in self.weights],
            "biases": [[float(v) for v in b] for b in self.biases],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MlpNetwork":
        if data.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {data.get('version')}")
        sizes = [int(n) for n in data["layer_sizes"]]
        weights = [
            np.asarray(w, dtype=float).reshape(n_out, n_in)
            for w, n_in, n_out in zip(data["weights"], sizes[:-1], sizes[1:])
        ]
        biases = [np.asarray(b, dtype=float) for b in data["biases"]]
        return cls(
            sizes,
            weights,
            biases,
            np.asarray(data["input_min"], dtype=float),
            np.asarray(data["input_max"], dtype=float),
            float(data["output_min"]),
            float(data["output_max"]),
            data.get("target", ""),
        )

    @classmethod
    def loads(cls, text: str) -> "MlpNetwork":
        return cls.from_dict(json.loads(text))


def forward(net: MlpNetwork, g: float, t: float) -> Prediction:
    x = np.array([[g, t]], dtype=float)
    return Prediction(float(net.predict(x)[0]), net.is_extrapolating(x))


def jacobian_normalized(net: MlpNetwork, x_n: np.ndarray) -> np.ndarray:
    """d(output)/d(params) for scaled inputs, shape (n_samples, n_params).

    Residuals are prediction minus target, so this is also the residual
    Jacobian used by Levenberg-Marquardt.
    """
    x_n = np.atleast_2d(x_n)
    acts = [x_n]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        acts.append(np.tanh(acts[-1] @ w.T + b))
    n = x_n.shape[0]
    blocks = []
    # sensitivity of the scalar output w.r.t. each layer's pre-activation
    sens = np.ones((n, 1))
    for layer in range(len(net.weights) - 1, -1, -1):
        a_in = acts[layer]
        d_w = (sens[:, :, None] * a_in[:, None, :]).reshape(n, -1)
        blocks.append((d_w, sens.copy()))
        if layer > 0:
            sens = (sens @ net.weights[layer]) * (1.0 - acts[layer] ** 2)
    blocks.reverse()
    return np.hstack([np.hstack(pair) for pair in blocks])


def jacobian(net: MlpNetwork, data: "Dataset") -> np.ndarray:
    """Residual Jacobian over a dataset's inputs, using the network's scaling."""
    if len(data) == 0:
        raise ValueError("jacobian needs a non-empty batch")
    return jacobian_normalized(net, net.scale_x(data.inputs))


@dataclass
class Dataset:
    g: np.ndarray
    t: np.ndarray
    v_mpp: np.ndarray
    i_mpp: np.ndarray

    def __post_init__(self):
        self.g, self.t = np.asarray(self.g, float), np.asarray(self.t, float)
        self.v_mpp, self.i_mpp = np.asarray(self.v_mpp, float), np.asarray(self.i_mpp, float)
        if not (len(self.g) == len(self.t) == len(self.v_mpp) == len(self.i_mpp)):
            raise ValueError("dataset columns must have equal length")

    def __len__(self) -> int:
        return len(self.g)

    @property
    def inputs(self) -> np.ndarray:
        return np.column_stack([self.g, self.t])

    def column(self, target: str) -> np.ndarray:
        if target not in ("v_mpp", "i_mpp"):
            raise ValueError(f"unknown target {target!r}")
        return getattr(self, target)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.g[idx], self.t[idx], self.v_mpp[idx], self.i_mpp[idx])


DEFAULT_G_GRID = tuple(float(g) for g in range(200, 1001, 50))
DEFAULT_T_GRID = tuple(273.15 + c for c in range(15, 76, 5))


def generate_dataset(
    params: PanelParams,
    g_grid: Sequence[float] = DEFAULT_G_GRID,
    t_grid: Sequence[float] = DEFAULT_T_GRID,
) -> Dataset:
    """Oracle-labelled MPPs over the cartesian product of the grids (t in K)."""
    rows = []
    for g in g_grid:
        for t in t_grid:
            mpp = mpp_oracle(params, EnvConditions(float(g), float(t)))
            rows.append((g, t, mpp.v, mpp.i))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def check_dataset(data: Dataset, params: PanelParams, rel_tol: float = 1e-6) -> float:
    """Largest relative power mismatch against a fresh oracle; raises past ``rel_tol``."""
    worst = 0.0
    for g, t, v, i in zip(data.g, data.t, data.v_mpp, data.i_mpp):
        p = mpp_oracle(params, EnvConditions(float(g), float(t))).p
        worst = max(worst, abs(v * i - p) / p)
    if worst >= rel_tol:
        raise ValueError(f"dataset row power differs from the oracle by {worst:.3e} (relative)")
    return worst


def split_indices(n: int, seed: int = 42, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(frozen=True)
class LmOptions:
    max_epochs: int = 500
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    tol: float = 1e-10


@dataclass
class TrainReport:
    epochs: int = 0
    losses: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    final_lambda: float = 0.0
    converged: bool = False
    train_max_rel_error: float = float("nan")
    val_max_rel_error: float = float("nan")

    def to_csv(self) -> str:
        lines = ["step,loss,lambda"]
        lines += [f"{k},{loss!r},{lam!r}" for k, (loss, lam) in enumerate(zip(self.losses, self.lambdas))]
        return "\n".join(lines) + "\n"


def lm_fit(net: MlpNetwork, x_n: np.ndarray, y_n: np.ndarray, opts: LmOptions | None = None) -> TrainReport:
    """Levenberg-Marquardt on already-scaled data; updates ``net`` in place."""
    opts = opts or LmOptions()
    if opts.max_epochs <= 0:
        raise NotTrained("max_epochs must be positive; network left untrained")
    theta = net.get_params()
    r = net.forward_normalized(x_n) - y_n
    loss = float(r @ r)
    lam = opts.lambda0
    report = TrainReport(losses=[loss], lambdas=[lam])
    accepted_any = False
    eye = np.eye(theta.size)

    for epoch in range(1, opts.max_epochs + 1):
        report.epochs = epoch
        jac = jacobian_normalized(net, x_n)
        jtj, jtr = jac.T @ jac, jac.T @ r
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                delta = -cho_solve(cho_factor(jtj + lam * eye), jtr)
                ok = np.all(np.isfinite(delta))
            except (LinAlgError, ValueError):
                ok = False
            if ok:
                net.set_params(theta + delta)
                r_new = net.forward_normalized(x_n) - y_n
                loss_new = float(r_new @ r_new)
                if loss_new < loss:
                    accepted = True
                    break
            if opts.lambda_up <= 1.0:
                break
            lam *= opts.lambda_up
        if not accepted:
            net.set_params(theta)
            if not accepted_any:
                raise TrainingDiverged(f"lambda reached {lam:.3g} without an accepted step")
            report.converged = True
            break
        accepted_any = True
        theta = theta + delta
        change = loss - loss_new
        r, loss = r_new, loss_new
        lam = max(lam / opts.lambda_down, 1e-300)
        report.losses.append(loss)
        report.lambdas.append(lam)
        if change < opts.tol or loss == 0.0:
            report.converged = True
            break
    report.final_lambda = lam
    return report


def max_relative_error(net: MlpNetwork, data: Dataset, target: str) -> float:
    y = data.column(target)
    return float(np.max(np.abs(net.predict(data.inputs) - y) / np.abs(y)))


def lm_train(
    net: MlpNetwork,
    data: Dataset,
    target: str,
    opts: LmOptions | None = None,
    seed: int = 42,
) -> tuple[MlpNetwork, TrainReport]:
    """Train a copy of ``net`` on ``data[target]`` with an 80/20 seeded split."""
    net = net.copy()
    net.target = target
    train_idx, val_idx = split_indices(len(data), seed)
    train, val = data.subset(train_idx), data.subset(val_idx)
    y = train.column(target)
    net.fit_scaling(train.inputs, y)
    report = lm_fit(net, net.scale_x(train.inputs), net.scale_y(y), opts)
    report.train_max_rel_error = max_relative_error(net, train, target)
    if len(val):
        report.val_max_rel_error = max_relative_error(net, val, target)
    return net, report


def train_estimators(
    params: PanelParams,
    hidden: int = 10,
    seed: int = 42,
    opts: LmOptions | None = None,
    data: Dataset | None = None,
) -> tuple[tuple[MlpNetwork, MlpNetwork], tuple[TrainReport, TrainReport], Dataset]:
    """Generate the default dataset and train the voltage and current networks."""
    data = generate_dataset(params) if data is None else data
    v_net, v_rep = lm_train(MlpNetwork.initialize((2, hidden, 1), seed), data, "v_mpp", opts, seed)
    i_net, i_rep = lm_train(MlpNetwork.initialize((2, hidden, 1), seed + 1), data, "i_mpp", opts, seed)
    return (v_net, i_net), (v_rep, i_rep), data


def estimate_mpp(nets: tuple[MlpNetwork, MlpNetwork], env: EnvConditions) -> MppEstimate:
    v = forward(nets[0], env.g, env.t)
    i = forward(nets[1], env.g, env.t)
    return MppEstimate(v.value, i.value, v.extrapolated or i.extrapolated)
