"""Neural-network surrogate of EDFA gain and noise figure.

One hidden ReLU layer maps 42 features -- the 40 peak-normalized input
channel powers (dB) plus total input and total output power (dBm) -- to 40
outputs.  The gain network predicts the peak-normalized output spectrum; the
NF network predicts the noise figure in dB directly.

Inference is written in ``jax.numpy`` so the cascade can differentiate
through it.  Training uses minibatch Adam with early stopping on a
validation split drawn by input profile.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from importlib import resources
from pathlib import Path
from typing import Literal

import jax
import jax.numpy as jnp
import numpy as np

from . import _fileio
from .edfa_noise import ase_from_nf, nf_from_ase  # noqa: F401  (re-exported)
from .oracle import Dataset

Kind = Literal["gain", "nf"]
MODEL_FORMAT = "snropt-surrogate"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class EnvelopeWarning(UserWarning):
    """Surrogate queried outside the operating range it was trained on."""


@dataclass
class Hyperparams:
    hidden_dim: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 2000
    patience: int = 100
    validation_fraction: float = 0.2


@dataclass
class SurrogateModel:
    kind: Kind
    weights: dict  # W1 (in, hidden), b1, W2 (hidden, out), b2 -- numpy arrays
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    seed: int = 0
    envelope: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.weights["W1"].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights["W1"].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights["W2"].shape[1]

    def arrays(self) -> dict:
        """Weights and scalers as a pytree of jax arrays (what :func:`forward` consumes)."""
        tree = {k: jnp.asarray(v) for k, v in self.weights.items()}
        tree.update(x_mean=jnp.asarray(self.x_mean), x_scale=jnp.asarray(self.x_scale),
                    y_mean=jnp.asarray(self.y_mean), y_scale=jnp.asarray(self.y_scale))
        return tree

    def in_envelope(self, input_norm_db, total_in, total_out, slack=0.5) -> bool:
        env = self.envelope
        if not env:
            return True
        exc = float(np.max(input_norm_db) - np.min(input_norm_db))
        return (env["total_in_min"] - slack <= total_in <= env["total_in_max"] + slack
                and env["total_out_min"] - slack <= total_out <= env["total_out_max"] + slack
                and exc <= env["excursion_max"] + slack)


def forward(arrays: dict, features):
    """Network output for raw (unscaled) features; works on a vector or a batch."""
    z = (features - arrays["x_mean"]) / arrays["x_scale"]
    hidden = jax.nn.relu(z @ arrays["W1"] + arrays["b1"])
    return (hidden @ arrays["W2"] + arrays["b2"]) * arrays["y_scale"] + arrays["y_mean"]


def features(input_norm_db, total_in, total_out):
    total_in = jnp.broadcast_to(jnp.asarray(total_in, dtype=float), jnp.shape(input_norm_db)[:-1])
    total_out = jnp.broadcast_to(jnp.asarray(total_out, dtype=float), jnp.shape(input_norm_db)[:-1])
    return jnp.concatenate([input_norm_db, total_in[..., None], total_out[..., None]], axis=-1)


def _log_sum_db(x_db):
    return 10 * jnp.log10(jnp.sum(10 ** (x_db / 10), axis=-1))


def gain_from_output(input_norm_db, output_norm_db, total_in, total_out):
    """Per-channel gain (dB) from peak-normalized input/output spectra and totals."""
    offset_in = total_in - _log_sum_db(input_norm_db)
    offset_out = total_out - _log_sum_db(output_norm_db)
    return output_norm_db - input_norm_db + (offset_out - offset_in)[..., None]


def normalized_output(arrays, input_norm_db, total_in, total_out):
    """Predicted output spectrum, peak-normalized to 0 dB."""
    # the dense layers learn the departure of the output shape from the input shape
    out = input_norm_db + forward(arrays, features(input_norm_db, total_in, total_out))
    return out - jax.lax.stop_gradient(jnp.max(out, axis=-1, keepdims=True))


def gain_apply(arrays, input_norm_db, total_in, total_out):
    out_norm = normalized_output(arrays, input_norm_db, total_in, total_out)
    return gain_from_output(input_norm_db, out_norm, jnp.asarray(total_in), jnp.asarray(total_out))


def nf_apply(arrays, input_norm_db, total_in, total_out):
    return forward(arrays, features(input_norm_db, total_in, total_out))


def _check_query(model, kind, input_norm_db, total_in, total_out):
    if model.kind != kind:
        raise ValueError(f"expected a {kind} model, got {model.kind}")
    x = np.asarray(input_norm_db, dtype=float)
    if x.shape[-1] != model.output_dim:
        raise ValueError(f"expected {model.output_dim} channels, got {x.shape[-1]}")
    if x.ndim == 1 and not model.in_envelope(x, total_in, total_out):
        warnings.warn(f"{kind} surrogate queried outside its training envelope "
                      f"(P_in={total_in:.2f} dBm, P_out={total_out:.2f} dBm)", EnvelopeWarning,
                      stacklevel=3)
    return x


def predict_gain(model: SurrogateModel, input_psd_normalized, total_in, total_out) -> np.ndarray:
    x = _check_query(model, "gain", input_psd_normalized, total_in, total_out)
    return np.asarray(gain_apply(model.arrays(), jnp.asarray(x), total_in, total_out))


def predict_nf(model: SurrogateModel, input_psd_normalized, total_in, total_out) -> np.ndarray:
    x = _check_query(model, "nf", input_psd_normalized, total_in, total_out)
    return np.asarray(nf_apply(model.arrays(), jnp.asarray(x), total_in, total_out))


# -- training -------------------------------------------------------------------------

def training_arrays(dataset: Dataset, kind: Kind):
    """Features and targets for ``kind``; also returns the profile id of each row."""
    a = dataset.arrays()
    pin_norm = a["pin"] - a["pin"].max(axis=1, keepdims=True)
    x = np.concatenate([pin_norm, a["tin"][:, None], a["tout"][:, None]], axis=1)
    if kind == "gain":
        out = a["pin"] + a["gain"]
        y = out - out.max(axis=1, keepdims=True) - pin_norm
    elif kind == "nf":
        y = a["nf"]
    else:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    return x, y, a["profile"]


def split_by_profile(profile_ids, fraction, seed):
    """Boolean mask of validation rows; whole profiles go to one side only."""
    unique = np.unique(profile_ids)
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(fraction * unique.size))) if unique.size > 1 else 0
    val_profiles = rng.permutation(unique)[:n_val]
    return np.isin(profile_ids, val_profiles)


def _scaler(a):
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    return mean, np.where(scale < 1e-8, 1.0, scale)


def init_weights(input_dim, hidden_dim, output_dim, seed):
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.normal(0.0, math.sqrt(2.0 / input_dim), (input_dim, hidden_dim)),
        "b1": np.zeros(hidden_dim),
        "W2": rng.normal(0.0, math.sqrt(2.0 / (hidden_dim + output_dim)), (hidden_dim, output_dim)),
        "b2": np.zeros(output_dim),
    }


def _error_db(w, x, y, y_scale, centered):
    hidden = jax.nn.relu(x @ w["W1"] + w["b1"])
    err = (hidden @ w["W2"] + w["b2"] - y) * y_scale
    if centered:
        # a common shift of the normalized output cancels once total power is restored
        err = err - jnp.mean(err, axis=-1, keepdims=True)
    return err


def _loss(w, xb, yb, y_scale, centered):
    return jnp.mean(_error_db(w, xb, yb, y_scale, centered) ** 2)


@partial(jax.jit, static_argnames=("lr", "centered"))
def _run_epoch(w, m, v, t, x, y, y_scale, batches, lr, centered):
    b1, b2, eps = 0.9, 0.999, 1e-8

    def step(carry, idx):
        w, m, v, t = carry
        loss, g = jax.value_and_grad(_loss)(w, x[idx], y[idx], y_scale, centered)
        t = t + 1
        m = jax.tree_util.tree_map(lambda m_, g_: b1 * m_ + (1 - b1) * g_, m, g)
        v = jax.tree_util.tree_map(lambda v_, g_: b2 * v_ + (1 - b2) * g_ * g_, v, g)
        corr = jnp.sqrt(1 - b2 ** t) / (1 - b1 ** t)
        w = jax.tree_util.tree_map(lambda w_, m_, v_: w_ - lr * corr * m_ / (jnp.sqrt(v_) + eps), w, m, v)
        return (w, m, v, t), loss

    (w, m, v, t), losses = jax.lax.scan(step, (w, m, v, t), batches)
    return w, m, v, t, jnp.mean(losses)


@partial(jax.jit, static_argnames=("centered",))
def _mse_db2(w, x, y, y_scale, centered):
    return jnp.mean(_error_db(w, x, y, y_scale, centered) ** 2)


def train(dataset: Dataset, kind: Kind, hyperparams: Hyperparams | None = None, seed: int = 0,
          epochs: int | None = None) -> SurrogateModel:
    """Fit a surrogate; returns the weights from the best validation epoch.

    ``epochs`` overrides ``hyperparams.max_epochs``; zero returns the seeded
    initialization unchanged.
    """
    hp = hyperparams or Hyperparams()
    max_epochs = hp.max_epochs if epochs is None else epochs
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    x, y, profiles = training_arrays(dataset, kind)
    val_mask = split_by_profile(profiles, hp.validation_fraction, seed)
    if not val_mask.any():
        val_mask = np.zeros_like(val_mask)
    train_mask = ~val_mask if val_mask.any() else np.ones_like(val_mask)
    x_mean, x_scale = _scaler(x[train_mask])
    y_mean, y_scale = _scaler(y[train_mask])
    xs, ys = (x - x_mean) / x_scale, (y - y_mean) / y_scale
    xt, yt = jnp.asarray(xs[train_mask]), jnp.asarray(ys[train_mask])
    xv, yv = (jnp.asarray(xs[val_mask]), jnp.asarray(ys[val_mask])) if val_mask.any() else (xt, yt)

    w = {k: jnp.asarray(a) for k, a in init_weights(x.shape[1], hp.hidden_dim, y.shape[1], seed).items()}
    m = jax.tree_util.tree_map(jnp.zeros_like, w)
    v = jax.tree_util.tree_map(jnp.zeros_like, w)
    t = jnp.asarray(0.0)
    y_scale_j = jnp.asarray(y_scale)
    rng = np.random.default_rng(seed + 1)
    n_train = xt.shape[0]
    batch = min(hp.batch_size, n_train)
    n_batches = n_train // batch

    centered = kind == "gain"
    best_w, best_val, best_epoch = w, float(_mse_db2(w, xv, yv, y_scale_j, centered)), 0
    history = []
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n_train)[: n_batches * batch].reshape(n_batches, batch)
        w, m, v, t, loss = _run_epoch(w, m, v, t, xt, yt, y_scale_j, jnp.asarray(order),
                                      hp.learning_rate, centered)
        val = float(_mse_db2(w, xv, yv, y_scale_j, centered))
        if not (math.isfinite(float(loss)) and math.isfinite(val)):
            raise TrainingDivergedError(epoch)
        history.append(val)
        if val < best_val:
            best_w, best_val, best_epoch = w, val, epoch
        elif epoch - best_epoch >= hp.patience:
            break

    a = dataset.arrays()
    pin_norm = a["pin"] - a["pin"].max(axis=1, keepdims=True)
    envelope = {
        "total_in_min": float(a["tin"].min()), "total_in_max": float(a["tin"].max()),
        "total_out_min": float(a["tout"].min()), "total_out_max": float(a["tout"].max()),
        "excursion_max": float((-pin_norm.min(axis=1)).max()),
    }
    training = {"epochs_run": len(history), "best_epoch": best_epoch, "val_mse_dB2": best_val,
                "n_train": int(train_mask.sum()), "n_val": int(val_mask.sum()),
                "learning_rate": hp.learning_rate, "batch_size": batch}
    return SurrogateModel(kind, {k: np.asarray(a_) for k, a_ in best_w.items()}, x_mean, x_scale,
                          y_mean, y_scale, seed, envelope, training)


# -- evaluation -------------------------------------------------------------------------

def mae(sample_pred, sample_truth) -> float:
    """Maximum absolute error across channels (dB)."""
    return float(np.max(np.abs(np.asarray(sample_pred, float) - np.asarray(sample_truth, float))))


@dataclass
class EvalReport:
    mse_per_gav: dict  # bucket center (dB) -> (mse dB^2, sample count)
    mse_per_pout: dict  # total output (dBm) -> (mse, count)
    mse_per_channel: np.ndarray
    mae_values: np.ndarray
    mae_bins: np.ndarray
    mae_density: np.ndarray
    intra_or_inter: str = "intra"

    @property
    def mse(self) -> float:
        return float(np.mean(self.mse_per_channel))


def model_predictions(model: SurrogateModel, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Predicted and true per-channel values the evaluation compares.

    Gain models are compared on the absolute output spectrum (dBm), NF models
    on the noise figure (dB).
    """
    a = dataset.arrays()
    pin_norm = a["pin"] - a["pin"].max(axis=1, keepdims=True)
    if model.kind == "gain":
        g = np.asarray(gain_apply(model.arrays(), jnp.asarray(pin_norm), jnp.asarray(a["tin"]),
                                  jnp.asarray(a["tout"])))
        return a["pin"] + g, a["pin"] + a["gain"]
    pred = np.asarray(nf_apply(model.arrays(), jnp.asarray(pin_norm), jnp.asarray(a["tin"]),
                               jnp.asarray(a["tout"])))
    return pred, a["nf"]


def report_from_predictions(pred, truth, gav, pout, label="intra", bins=None) -> EvalReport:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    gav, pout = np.asarray(gav, float), np.asarray(pout, float)
    sq = (pred - truth) ** 2
    per_sample = sq.mean(axis=1)
    by_gav = {}
    for center in np.unique(np.round(gav)):
        sel = np.abs(gav - center) <= 1.0 + 1e-9
        if sel.any():
            by_gav[float(center)] = (float(per_sample[sel].mean()), int(sel.sum()))
    by_pout = {}
    for level in np.unique(pout):
        sel = pout == level
        by_pout[float(level)] = (float(per_sample[sel].mean()), int(sel.sum()))
    maes = np.abs(pred - truth).max(axis=1)
    if bins is None:
        top = max(float(maes.max()), 1e-9)
        bins = np.linspace(0.0, top * (1 + 1e-9), 31)
    density, edges = np.histogram(maes, bins=bins, density=True)
    return EvalReport(by_gav, by_pout, sq.mean(axis=0), maes, edges, density, label)


def evaluate(model: SurrogateModel, dataset: Dataset, intra_or_inter: str = "intra") -> EvalReport:
    pred, truth = model_predictions(model, dataset)
    a = dataset.arrays()
    return report_from_predictions(pred, truth, a["tout"] - a["tin"], a["tout"], intra_or_inter)


def write_report(report: EvalReport, mse_path, mae_path) -> None:
    rows = [["gav", c, m, n] for c, (m, n) in sorted(report.mse_per_gav.items())]
    rows += [["pout", c, m, n] for c, (m, n) in sorted(report.mse_per_pout.items())]
    rows += [["channel", i, float(m), 1] for i, m in enumerate(report.mse_per_channel)]
    _fileio.write_table(mse_path, "eval-mse", ["group", "bucket", "mse_dB2", "count"], rows,
                        [f"mode={report.intra_or_inter}", "gav buckets are +-1 dB windows"])
    edges = report.mae_bins
    _fileio.write_table(mae_path, "eval-mae", ["bin_low_dB", "bin_high_dB", "density"],
                        [[float(lo), float(hi), float(d)] for lo, hi, d in zip(edges[:-1], edges[1:],
                                                                              report.mae_density)],
                        [f"mode={report.intra_or_inter}"])


# -- model files ------------------------------------------------------------------------

def model_to_dict(model: SurrogateModel) -> dict:
    return {
        "format": MODEL_FORMAT, "version": 1, "kind": model.kind,
        "input_dim": model.input_dim, "hidden_dim": model.hidden_dim, "output_dim": model.output_dim,
        "seed": model.seed, "envelope": model.envelope, "training": model.training,
        "x_mean": model.x_mean.tolist(), "x_scale": model.x_scale.tolist(),
        "y_mean": model.y_mean.tolist(), "y_scale": model.y_scale.tolist(),
        "weights": {k: np.asarray(v).tolist() for k, v in model.weights.items()},
    }


def model_from_dict(d: dict) -> SurrogateModel:
    if d.get("format") != MODEL_FORMAT:
        raise _fileio.FileFormatError("not a surrogate model file")
    if d.get("version") != 1:
        raise _fileio.FileFormatError(f"unsupported surrogate model version {d.get('version')}")
    weights = {k: np.asarray(v, dtype=float) for k, v in d["weights"].items()}
    model = SurrogateModel(d["kind"], weights, np.asarray(d["x_mean"]), np.asarray(d["x_scale"]),
                           np.asarray(d["y_mean"]), np.asarray(d["y_scale"]), int(d.get("seed", 0)),
                           d.get("envelope", {}), d.get("training", {}))
    if (model.input_dim, model.hidden_dim, model.output_dim) != (d["input_dim"], d["hidden_dim"],
                                                                  d["output_dim"]):
        raise _fileio.FileFormatError("weight shapes disagree with the declared dimensions")
    return model


def save_model(path, model: SurrogateModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> SurrogateModel:
    return model_from_dict(json.loads(Path(path).read_text()))


@dataclass
class EdfaSurrogate:
    """Gain and NF networks of one amplifier make."""

    model_id: str
    gain: SurrogateModel
    nf: SurrogateModel

    def arrays(self) -> dict:
        return {"gain": self.gain.arrays(), "nf": self.nf.arrays()}

    @staticmethod
    def apply(arrays, input_norm_db, total_in, total_out):
        """Gain and NF (dB) -- the traceable interface the cascade calls."""
        return (gain_apply(arrays["gain"], input_norm_db, total_in, total_out),
                nf_apply(arrays["nf"], input_norm_db, total_in, total_out))

    def in_envelope(self, input_norm_db, total_in, total_out) -> bool:
        return (self.gain.in_envelope(input_norm_db, total_in, total_out)
                and self.nf.in_envelope(input_norm_db, total_in, total_out))


def load_surrogate(model_id: str = "A1", directory=None) -> EdfaSurrogate:
    """Load ``<id>_gain.json`` and ``<id>_nf.json``; packaged models when ``directory`` is None."""
    if directory is None:
        base = resources.files("snropt").joinpath("data/models")
        gain = model_from_dict(json.loads(base.joinpath(f"{model_id}_gain.json").read_text()))
        nf = model_from_dict(json.loads(base.joinpath(f"{model_id}_nf.json").read_text()))
    else:
        base = Path(directory)
        gain, nf = load_model(base / f"{model_id}_gain.json"), load_model(base / f"{model_id}_nf.json")
    return EdfaSurrogate(model_id, gain, nf)
