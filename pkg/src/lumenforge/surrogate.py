"""Feedforward surrogate: performance parameters -> design parameters.

A small tanh MLP trained with full-batch Levenberg-Marquardt on the mean
squared coefficient-space error, exactly the regime the tiny databases put
us in (hundreds of samples, hundreds to a few thousand weights). Inputs and
outputs are min-max normalized to [-1, 1]; constant output dimensions are
frozen by a zero scale so denormalization reproduces them exactly.

Training is deterministic for a fixed (dataset, topology, options, seed):
weights start from a seeded uniform draw scaled by fan-in, and every LM step
is a dense linear solve with no randomized elements.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import SCHEMA_VERSION
from .optics import OffsetTarget, RectTarget, Scenario
from .shsurface import SHCoefficients, SurfaceModel, quadrant_mask, validate_surface

TOPOLOGY_PRESETS = {
    "reflector_offset": [2, 6, 16, 123],
    "lens_rect": [3, 9, 18, 36],
}


class ModelFormatError(ValueError):
    """Model file is malformed, truncated, or from an unknown schema."""


@dataclass
class Normalizer:
    """Per-dimension affine map to [-1, 1] from recorded min/max."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_data(cls, data: np.ndarray) -> "Normalizer":
        return cls(lo=data.min(axis=0), hi=data.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.hi + self.lo)

    @property
    def scale(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        # 2 (x - lo) / (hi - lo) - 1 hits the interval ends exactly at the
        # recorded extremes; constant dimensions pin to 0
        span = self.hi - self.lo
        safe = np.where(span > 0.0, span, 1.0)
        return np.where(span > 0.0, 2.0 * (x - self.lo) / safe - 1.0, 0.0)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return self.lo + (y + 1.0) * 0.5 * (self.hi - self.lo)


@dataclass
class MlpModel:
    """Weights plus normalizers; immutable once built, safe to share."""

    topology: list[int]
    weights: list[np.ndarray]  # per layer, shape (n_in, n_out)
    biases: list[np.ndarray]  # per layer, shape (n_out,)
    input_norm: Normalizer
    output_norm: Normalizer
    scenario: str
    order: int = 10
    mask: str = "full"

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_model(topology: list[int], scenario: str, input_norm: Normalizer,
               output_norm: Normalizer, seed: int, order: int = 10,
               mask: str = "full") -> MlpModel:
    """Seeded uniform(-0.5, 0.5) weights scaled by 1/sqrt(fan_in), zero biases."""
    if len(topology) < 3:
        raise ValueError("need at least one hidden layer")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    weights, biases = [], []
    for n_in, n_out in zip(topology[:-1], topology[1:]):
        weights.append((rng.random((n_in, n_out)) - 0.5) / math.sqrt(n_in))
        biases.append(np.zeros(n_out))
    return MlpModel(topology=list(topology), weights=weights, biases=biases,
                    input_norm=input_norm, output_norm=output_norm,
                    scenario=scenario, order=order, mask=mask)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Denormalized network output for raw input(s); pure function."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = model.input_norm.normalize(np.atleast_2d(x))
    if a.shape[1] != model.topology[0]:
        raise ValueError(f"input dimension {a.shape[1]} != topology {model.topology[0]}")
    a = _forward_normalized(model, a)[-1]
    y = model.output_norm.denormalize(a)
    return y[0] if single else y


def _forward_normalized(model: MlpModel, x_n: np.ndarray) -> list[np.ndarray]:
    """Activations per layer (normalized domain); last layer is linear."""
    acts = [x_n]
    a = x_n
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if k == last else np.tanh(z)
        acts.append(a)
    return acts


def _pack(model: MlpModel) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b])
                           for w, b in zip(model.weights, model.biases)])


def _unpack(model: MlpModel, vec: np.ndarray) -> tuple[list, list]:
    weights, biases = [], []
    pos = 0
    for w, b in zip(model.weights, model.biases):
        weights.append(vec[pos:pos + w.size].reshape(w.shape))
        pos += w.size
        biases.append(vec[pos:pos + b.size])
        pos += b.size
    return weights, biases


def residual_jacobian(model: MlpModel, x_n: np.ndarray, y_n: np.ndarray):
    """Residuals e = f(x) - y in normalized space and their exact Jacobian.

    Rows are ordered output-major: all samples for output 0, then output 1,
    and so on. Columns follow the packed weight order (w then b per layer).
    """
    acts = _forward_normalized(model, x_n)
    n, d_out = y_n.shape
    n_params = model.n_params()
    residuals = (acts[-1] - y_n).T.ravel()  # output-major
    jac = np.empty((n * d_out, n_params))
    last = len(model.weights) - 1

    for o in range(d_out):
        delta = np.zeros((n, model.topology[-1]))
        delta[:, o] = 1.0
        cols = []
        grads = [None] * len(model.weights)
        for k in range(last, -1, -1):
            a_prev = acts[k]
            grads[k] = (np.einsum("ni,nj->nij", a_prev, delta).reshape(n, -1), delta)
            if k > 0:
                delta = (delta @ model.weights[k].T) * (1.0 - acts[k] ** 2)
        for k in range(len(model.weights)):
            gw, gb = grads[k]
            cols.append(gw)
            cols.append(gb)
        jac[o * n:(o + 1) * n, :] = np.concatenate(cols, axis=1)
    return residuals, jac


@dataclass
class TrainOptions:
    max_epochs: int = 1000
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_cap: float = 1e10
    gradient_stop: float = 1e-7
    seed: int = 0
    holdout_fraction: float = 0.0  # paper trains on every record


@dataclass
class TrainReport:
    epochs: int
    final_mse: float
    mse_history: list = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False
    holdout_mse: float | None = None
    holdout_indices: list = field(default_factory=list)


def train_lm(topology: list[int], dataset, opts: TrainOptions | None = None,
             scenario: str = "lens_rect", order: int = 10,
             mask: str = "full") -> tuple[MlpModel, TrainReport]:
    """Full-batch LM on the mean squared normalized output error.

    dataset is a sequence of (performance_params, design_vector) pairs. The
    objective is mean over residuals, so duplicating every sample leaves the
    trajectory unchanged. Returns the best-MSE model seen.
    """
    opts = opts or TrainOptions()
    xs = np.array([np.asarray(x, dtype=float) for x, _ in dataset])
    ys = np.array([np.asarray(y, dtype=float) for _, y in dataset])
    if xs.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if xs.shape[1] != topology[0] or ys.shape[1] != topology[-1]:
        raise ValueError(
            f"dataset dims {xs.shape[1]}->{ys.shape[1]} do not match topology "
            f"{topology[0]}->{topology[-1]}"
        )

    holdout_idx: np.ndarray = np.array([], dtype=int)
    train_idx = np.arange(xs.shape[0])
    if opts.holdout_fraction > 0.0:
        n_hold = max(1, int(round(opts.holdout_fraction * xs.shape[0])))
        order_idx = np.random.Generator(
            np.random.Philox(key=np.uint64(opts.seed ^ 0x5DEECE66D))
        ).permutation(xs.shape[0])
        holdout_idx = np.sort(order_idx[:n_hold])
        train_idx = np.sort(order_idx[n_hold:])

    x_train, y_train = xs[train_idx], ys[train_idx]
    input_norm = Normalizer.from_data(x_train)
    output_norm = Normalizer.from_data(y_train)
    model = init_model(topology, scenario, input_norm, output_norm, opts.seed,
                       order=order, mask=mask)

    x_n = input_norm.normalize(x_train)
    y_n = output_norm.normalize(y_train)

    t_start = time.perf_counter()
    params = _pack(model)
    res, jac = residual_jacobian(model, x_n, y_n)
    n_res = res.size
    mse = float(res @ res) / n_res
    best = (mse, params.copy())
    history = [mse]
    lam = opts.lambda_init
    diverged = False
    epoch = 0

    for epoch in range(1, opts.max_epochs + 1):
        grad = 2.0 * (jac.T @ res) / n_res
        if np.max(np.abs(grad)) < opts.gradient_stop:
            break
        h = (jac.T @ jac) / n_res
        g = (jac.T @ res) / n_res
        eye = np.eye(params.size)
        while True:
            try:
                delta = np.linalg.solve(h + lam * eye, -g)
                trial = params + delta
                model.weights, model.biases = _unpack(model, trial)
                out_t = _forward_normalized(model, x_n)[-1]
                res_t = (out_t - y_n).T.ravel()
                mse_t = float(res_t @ res_t) / n_res
                ok = np.isfinite(mse_t) and mse_t < mse
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                params, mse = trial, mse_t
                res, jac = residual_jacobian(model, x_n, y_n)
                lam = max(lam / opts.lambda_down, 1e-15)
                history.append(mse)
                if mse < best[0]:
                    best = (mse, params.copy())
                break
            lam *= opts.lambda_up
            if lam > opts.lambda_cap:
                diverged = True
                break
        if diverged:
            break

    model.weights, model.biases = _unpack(model, best[1])
    report = TrainReport(
        epochs=epoch,
        final_mse=best[0],
        mse_history=history,
        wall_time=time.perf_counter() - t_start,
        diverged=diverged,
        holdout_indices=[int(i) for i in holdout_idx],
    )
    if holdout_idx.size:
        pred = forward(model, xs[holdout_idx])
        err = output_norm.normalize(pred) - output_norm.normalize(ys[holdout_idx])
        report.holdout_mse = float(np.mean(err * err))
    return model, report


# ---------------------------------------------------------------------------
# design-space glue


def target_params(target) -> np.ndarray:
    return np.array(target.params(), dtype=float)


def design_vector(surface: SurfaceModel, scenario_kind: str) -> np.ndarray:
    """Record -> network output: [tilt, 121 coeffs] or 36 masked coeffs."""
    if scenario_kind == "reflector_offset":
        return np.concatenate([[surface.tilt_alpha, surface.tilt_beta],
                               surface.coeffs.values])
    mask = surface.coeffs.mask or quadrant_mask(surface.coeffs.order)
    return mask.pack(surface.coeffs.values)


def infer_design(model: MlpModel, target, validate: bool = True) -> SurfaceModel:
    """Millisecond path: forward pass unpacked into a validated surface.

    validate=False skips the dense positive-radius check (callers that
    validate separately, e.g. to time the bare forward pass).
    """
    if isinstance(target, OffsetTarget):
        kind = "reflector_offset"
    elif isinstance(target, RectTarget):
        kind = "lens_rect"
    else:
        raise TypeError(f"unsupported target {type(target).__name__}")
    if kind != model.scenario:
        raise ValueError(f"model is for {model.scenario!r}, target is {kind!r}")

    y = forward(model, target_params(target))
    if kind == "reflector_offset":
        coeffs = SHCoefficients(order=model.order, values=y[2:])
        surface = SurfaceModel(coeffs=coeffs, tilt_alpha=float(y[0]),
                               tilt_beta=float(y[1]))
    else:
        mask = quadrant_mask(model.order)
        coeffs = SHCoefficients.from_masked(mask, y)
        surface = SurfaceModel(coeffs=coeffs)
    if validate:
        scenario = Scenario.preset(kind)
        validate_surface(surface, scenario.cone_half_angle)  # reported, never clamped
    return surface


def dataset_from_records(records) -> list[tuple[np.ndarray, np.ndarray]]:
    """(performance, design) pairs from successful database records."""
    out = []
    for rec in records:
        if rec.error is not None:
            continue
        out.append((target_params(rec.target), design_vector(rec.surface, rec.scenario)))
    return out


# ---------------------------------------------------------------------------
# serialization


def save_model(model: MlpModel, path) -> None:
    payload = {
        "schema": SCHEMA_VERSION,
        "scenario": model.scenario,
        "topology": model.topology,
        "activation": "tanh",
        "layers": [{"w": w.tolist(), "b": b.tolist()}
                   for w, b in zip(model.weights, model.biases)],
        "input_norm": {"min": model.input_norm.lo.tolist(),
                       "max": model.input_norm.hi.tolist()},
        "output_norm": {"min": model.output_norm.lo.tolist(),
                        "max": model.output_norm.hi.tolist()},
        "order": model.order,
        "mask": model.mask,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> MlpModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model file {path}: {exc}") from exc
    try:
        if data["schema"] != SCHEMA_VERSION:
            raise ModelFormatError(f"unsupported schema version {data['schema']}")
        topology = [int(v) for v in data["topology"]]
        weights = [np.array(layer["w"], dtype=float) for layer in data["layers"]]
        biases = [np.array(layer["b"], dtype=float) for layer in data["layers"]]
        model = MlpModel(
            topology=topology,
            weights=weights,
            biases=biases,
            input_norm=Normalizer(lo=np.array(data["input_norm"]["min"], dtype=float),
                                  hi=np.array(data["input_norm"]["max"], dtype=float)),
            output_norm=Normalizer(lo=np.array(data["output_norm"]["min"], dtype=float),
                                   hi=np.array(data["output_norm"]["max"], dtype=float)),
            scenario=data["scenario"],
            order=int(data["order"]),
            mask=data["mask"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        if w.shape != (topology[k], topology[k + 1]) or b.shape != (topology[k + 1],):
            raise ModelFormatError(
                f"layer {k} shapes {w.shape}/{b.shape} disagree with topology {topology}"
            )
    return model
