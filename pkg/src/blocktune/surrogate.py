"""Learned performance models: storing time (validation + committing) and
latency as functions of block composition and node bandwidth.

Three model families are used, one per target: a gradient-boosted tree
ensemble for validation time, a low-degree polynomial for committing time,
and a single regression tree for latency. ``PerformancePredictor`` bundles
the three behind the two functions the optimizer needs: ``f`` (storing
time = validation + committing) and ``g`` (latency).

Fitting is deterministic given identical samples and hyperparameters, and
fitted models are immutable, so predictors can be shared freely between
concurrent evaluators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import DatasetError, FitError, PredictorNotFittedError

FEATURE_NAMES = ("tx_count", "block_bytes", "bandwidth")
DATASET_COLUMNS = ("tx_count", "block_bytes", "bandwidth", "vt_s", "ct_s", "latency_s")

_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class FeatureVector:
    """One prediction point: transactions per block, block bytes, and the
    committing node's bandwidth in bytes/second. All strictly positive."""

    tx_count: int
    block_bytes: int
    bandwidth: float

    def __post_init__(self):
        if self.tx_count < 1 or self.block_bytes < 1 or not self.bandwidth > 0:
            raise ValueError(f"feature values must be strictly positive: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx_count, self.block_bytes, self.bandwidth],
                        dtype=np.float64)


@dataclass(frozen=True)
class TrainingSample:
    """Measured per-block costs at one feature point; targets in seconds."""

    features: FeatureVector
    validation_time_s: float
    committing_time_s: float
    latency_s: float

    def __post_init__(self):
        for name in ("validation_time_s", "committing_time_s", "latency_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def samples_to_arrays(samples):
    """Split samples into a (n, 3) feature matrix and the three target vectors."""
    points = np.array([s.features.as_array() for s in samples], dtype=np.float64)
    vt = np.array([s.validation_time_s for s in samples], dtype=np.float64)
    ct = np.array([s.committing_time_s for s in samples], dtype=np.float64)
    lat = np.array([s.latency_s for s in samples], dtype=np.float64)
    return points, vt, ct, lat


# ---------------------------------------------------------------------------
# dataset file I/O
# ---------------------------------------------------------------------------

def load_dataset(path) -> list:
    """Parse the columnar dataset format (see DATASET_COLUMNS for the header).

    Errors cite the 1-based file line and the offending column.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    header = tuple(col.strip() for col in lines[0].split(","))
    if header != DATASET_COLUMNS:
        raise DatasetError(
            f"{path}: line 1: expected header {','.join(DATASET_COLUMNS)}, "
            f"got {lines[0]!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(DATASET_COLUMNS):
            raise DatasetError(
                f"{path}: line {lineno}: expected {len(DATASET_COLUMNS)} columns, "
                f"got {len(cells)}")
        values = {}
        for col, cell in zip(DATASET_COLUMNS, cells):
            try:
                values[col] = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: line {lineno}: column {col}: not a number: {cell!r}"
                ) from None
        if values["tx_count"] < 1 or values["tx_count"] != int(values["tx_count"]):
            raise DatasetError(
                f"{path}: line {lineno}: column tx_count: must be a positive integer")
        if values["block_bytes"] < 1:
            raise DatasetError(
                f"{path}: line {lineno}: column block_bytes: must be >= 1")
        if not values["bandwidth"] > 0:
            raise DatasetError(
                f"{path}: line {lineno}: column bandwidth: must be > 0")
        for col in ("vt_s", "ct_s", "latency_s"):
            if values[col] < 0:
                raise DatasetError(
                    f"{path}: line {lineno}: column {col}: must be >= 0")
        samples.append(TrainingSample(
            FeatureVector(int(values["tx_count"]), int(values["block_bytes"]),
                          values["bandwidth"]),
            values["vt_s"], values["ct_s"], values["latency_s"]))
    return samples


def save_dataset(samples, path):
    """Write samples in the documented columnar format; floats round-trip
    exactly through :func:`load_dataset`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(DATASET_COLUMNS) + "\n")
        for s in samples:
            fh.write(f"{s.features.tx_count},{s.features.block_bytes},"
                     f"{s.features.bandwidth!r},{s.validation_time_s!r},"
                     f"{s.committing_time_s!r},{s.latency_s!r}\n")


# ---------------------------------------------------------------------------
# polynomial regression
# ---------------------------------------------------------------------------

def _monomial_exponents(degree: int):
    """All exponent triples with total degree <= degree, ordered by total
    degree and then with the tx_count exponent leading."""
    exps = []
    for total in range(degree + 1):
        for a in range(total, -1, -1):
            for b in range(total - a, -1, -1):
                exps.append((a, b, total - a - b))
    return exps


def monomial_name(exponents) -> str:
    parts = []
    for name, e in zip(FEATURE_NAMES, exponents):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts) if parts else "1"


def _design_matrix(z, exponents):
    cols = [np.prod([z[:, f] ** e for f, e in enumerate(exps) if e], axis=0)
            if any(exps) else np.ones(z.shape[0])
            for exps in exponents]
    return np.column_stack(cols)


class PolynomialModel:
    """Least-squares polynomial over the monomial expansion of the three
    features, fitted on internally standardized inputs."""

    def __init__(self, degree, exponents, coefficients, feature_mean, feature_scale):
        self.degree = degree
        self.exponents = [tuple(e) for e in exponents]
        self.coefficients = np.asarray(coefficients, dtype=np.float64)
        self.feature_mean = np.asarray(feature_mean, dtype=np.float64)
        self.feature_scale = np.asarray(feature_scale, dtype=np.float64)

    def predict(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        z = (points - self.feature_mean) / self.feature_scale
        return _design_matrix(z, self.exponents) @ self.coefficients

    def coefficients_in_input_space(self) -> np.ndarray:
        """Coefficients over raw (unstandardized) monomials, aligned with
        ``self.exponents``. Useful for reading fitted models off directly."""
        raw = {exps: 0.0 for exps in self.exponents}
        for coef, exps in zip(self.coefficients, self.exponents):
            # expand prod_f ((x_f - mu_f) / s_f)^e_f via the binomial theorem
            terms = [((), coef)]
            for f, e in enumerate(exps):
                mu = self.feature_mean[f]
                s = self.feature_scale[f]
                new_terms = []
                for raw_exps, c in terms:
                    for i in range(e + 1):
                        w = math.comb(e, i) * ((-mu) ** (e - i)) / (s ** e)
                        new_terms.append((raw_exps + (i,), c * w))
                terms = new_terms
            for raw_exps, c in terms:
                raw[raw_exps] += c
        return np.array([raw[exps] for exps in self.exponents])

    def to_dict(self) -> dict:
        return {
            "family": "polynomial",
            "degree": self.degree,
            "exponents": [list(e) for e in self.exponents],
            "coefficients": self.coefficients.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialModel":
        return cls(d["degree"], [tuple(e) for e in d["exponents"]],
                   d["coefficients"], d["feature_mean"], d["feature_scale"])


def fit_polynomial(samples, degree: int = 2) -> PolynomialModel:
    """Fit a degree-``degree`` polynomial to ``samples`` by linear least
    squares over standardized features.

    ``samples`` is either a list of :class:`TrainingSample` (fits the
    committing-time target) or a ``(points, targets)`` pair of arrays.
    The solve goes through an orthogonal decomposition, never the normal
    equations; a rank-deficient design raises naming the degenerate
    monomial columns.
    """
    if degree not in (1, 2, 3):
        raise FitError(f"polynomial degree must be 1, 2 or 3, got {degree}")
    if isinstance(samples, tuple):
        points, targets = samples
        points = np.asarray(points, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
    else:
        points, _, targets, _ = samples_to_arrays(samples)

    exponents = _monomial_exponents(degree)
    n_terms = len(exponents)
    if points.shape[0] < n_terms:
        raise FitError(
            f"degree {degree} needs at least {n_terms} samples, got {points.shape[0]}")

    mean = points.mean(axis=0)
    scale = points.std(axis=0)
    scale[scale == 0] = 1.0
    z = (points - mean) / scale
    design = _design_matrix(z, exponents)

    _, r, pivots = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(design.shape) * np.finfo(np.float64).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < n_terms:
        bad = [monomial_name(exponents[p]) for p in pivots[rank:]]
        raise FitError(
            "rank-deficient polynomial design; degenerate columns: "
            + ", ".join(sorted(bad)))

    coef, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    return PolynomialModel(degree, exponents, coef, mean, scale)


# ---------------------------------------------------------------------------
# regression trees and boosting
# ---------------------------------------------------------------------------

class RegressionTree:
    """A CART-style regression tree in flat-array form.

    Internal nodes store (split feature, threshold); leaves predict the mean
    of the training targets that reached them. Splits maximize the
    squared-error reduction over midpoints between consecutive sorted
    feature values.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples,
                 max_depth, min_samples_leaf):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def predict(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _kernels.tree_predict(self.feature, self.threshold, self.left,
                                     self.right, self.value, points)

    def to_dict(self) -> dict:
        return {
            "family": "tree",
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"],
                   d["value"], d["n_samples"], d["max_depth"],
                   d["min_samples_leaf"])


def _fit_tree_arrays(points, targets, max_depth, min_samples_leaf):
    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def build(idx, depth):
        node = len(feature)
        sub = targets[idx]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(sub.mean()))
        n_samples.append(idx.size)
        if depth >= max_depth or idx.size < 2 or idx.size < 2 * min_samples_leaf:
            return node
        f, thr, gain = _kernels.best_split(points[idx], sub, min_samples_leaf)
        if f < 0 or gain <= _GAIN_EPS:
            return node
        mask = points[idx, f] <= thr
        left_id = build(idx[mask], depth + 1)
        right_id = build(idx[~mask], depth + 1)
        feature[node] = f
        threshold[node] = thr
        left[node] = left_id
        right[node] = right_id
        return node

    build(np.arange(points.shape[0]), 0)
    return feature, threshold, left, right, value, n_samples


def fit_tree(samples, max_depth: int = 6, min_samples_leaf: int = 5,
             target: str = "latency_s") -> RegressionTree:
    """Grow a regression tree greedily, stopping on depth, leaf size, or
    zero gain. ``samples`` is a sample list (using ``target``) or a
    ``(points, targets)`` pair."""
    if isinstance(samples, tuple):
        points, targets = samples
        points = np.asarray(points, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
    else:
        points, vt, ct, lat = samples_to_arrays(samples)
        targets = {"validation_time_s": vt, "committing_time_s": ct,
                   "latency_s": lat}[target]
    if points.shape[0] == 0:
        raise FitError("cannot fit a tree on an empty sample set")
    arrays = _fit_tree_arrays(points, targets, max_depth, min_samples_leaf)
    return RegressionTree(*arrays, max_depth=max_depth,
                          min_samples_leaf=min_samples_leaf)


class BoostedEnsemble:
    """Squared-error gradient boosting over depth-limited regression trees.

    Prediction is the target mean plus the learning-rate-scaled sum of the
    per-round trees; the recorded training MSE trace is non-increasing.
    """

    def __init__(self, base_value, trees, learning_rate, train_mse):
        self.base_value = float(base_value)
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)
        self.train_mse = list(train_mse)
        self._pack()

    def _pack(self):
        if self.trees:
            self._feature = np.concatenate([t.feature for t in self.trees])
            self._threshold = np.concatenate([t.threshold for t in self.trees])
            sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
            self._offsets = np.concatenate(([0], np.cumsum(sizes)))
            shifted_left = [t.left + off for t, off in zip(self.trees, self._offsets)]
            shifted_right = [t.right + off for t, off in zip(self.trees, self._offsets)]
            self._left = np.concatenate(shifted_left)
            self._right = np.concatenate(shifted_right)
            self._value = np.concatenate([t.value for t in self.trees])
        else:
            self._feature = np.empty(0, dtype=np.int64)
            self._threshold = np.empty(0, dtype=np.float64)
            self._left = np.empty(0, dtype=np.int64)
            self._right = np.empty(0, dtype=np.int64)
            self._value = np.empty(0, dtype=np.float64)
            self._offsets = np.zeros(1, dtype=np.int64)

    def predict(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if not self.trees:
            return np.full(points.shape[0], self.base_value)
        return _kernels.forest_predict(self.base_value, self.learning_rate,
                                       self._feature, self._threshold,
                                       self._left, self._right, self._value,
                                       self._offsets, points)

    def to_dict(self) -> dict:
        return {
            "family": "boosted",
            "base_value": self.base_value,
            "learning_rate": self.learning_rate,
            "train_mse": self.train_mse,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls(d["base_value"], [RegressionTree.from_dict(t) for t in d["trees"]],
                   d["learning_rate"], d["train_mse"])


def fit_boosted(samples, rounds: int = 100, learning_rate: float = 0.1,
                tree_depth: int = 3, min_samples_leaf: int = 1,
                target: str = "validation_time_s") -> BoostedEnsemble:
    """Boost regression trees against squared error.

    Round 0 predicts the target mean; each round fits a tree to the current
    residuals and adds it scaled by ``learning_rate``.
    """
    if not 0 < learning_rate <= 1:
        raise FitError(f"learning_rate must be in (0, 1], got {learning_rate}")
    if isinstance(samples, tuple):
        points, targets = samples
        points = np.asarray(points, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
    else:
        points, vt, ct, lat = samples_to_arrays(samples)
        targets = {"validation_time_s": vt, "committing_time_s": ct,
                   "latency_s": lat}[target]
    if points.shape[0] < 2:
        raise FitError("boosting needs at least 2 samples")

    base = float(targets.mean())
    residuals = targets - base
    train_mse = [float(np.mean(residuals ** 2))]
    trees = []
    for _ in range(rounds):
        tree = fit_tree((points, residuals), max_depth=tree_depth,
                        min_samples_leaf=min_samples_leaf)
        residuals = residuals - learning_rate * tree.predict(points)
        trees.append(tree)
        train_mse.append(float(np.mean(residuals ** 2)))
    return BoostedEnsemble(base, trees, learning_rate, train_mse)


# ---------------------------------------------------------------------------
# composite predictor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateConfig:
    """Hyperparameters for the three models; fixed documented defaults,
    overridable through config files."""

    poly_degree: int = 2
    boost_rounds: int = 100
    boost_learning_rate: float = 0.1
    boost_tree_depth: int = 3
    boost_min_samples_leaf: int = 1
    tree_max_depth: int = 6
    tree_min_samples_leaf: int = 5
    holdout_fraction: float = 0.0
    rng_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        return cls(**d)


class PerformancePredictor:
    """The fitted performance functions used inside the optimizer.

    ``f`` (storing time) is the clamped sum of the validation-time and
    committing-time model outputs; ``g`` (latency) is the clamped latency
    model output. ``feature_ranges`` records the training envelope so
    callers can flag extrapolating queries in their reports.
    """

    def __init__(self, vt_model: BoostedEnsemble, ct_model: PolynomialModel,
                 latency_model: RegressionTree, feature_ranges,
                 fit_report: dict | None = None):
        self.vt_model = vt_model
        self.ct_model = ct_model
        self.latency_model = latency_model
        self.feature_ranges = np.asarray(feature_ranges, dtype=np.float64)
        self.fit_report = fit_report or {}

    @property
    def fitted(self) -> bool:
        return all(m is not None for m in
                   (self.vt_model, self.ct_model, self.latency_model))

    def _rows(self, features) -> np.ndarray:
        if isinstance(features, FeatureVector):
            return features.as_array().reshape(1, 3)
        return np.atleast_2d(np.asarray(features, dtype=np.float64))

    def predict_f_batch(self, points) -> np.ndarray:
        rows = self._rows(points)
        vt = np.maximum(self.vt_model.predict(rows), 0.0)
        ct = np.maximum(self.ct_model.predict(rows), 0.0)
        return vt + ct

    def predict_g_batch(self, points) -> np.ndarray:
        return np.maximum(self.latency_model.predict(self._rows(points)), 0.0)

    def predict_f(self, features) -> float:
        return float(self.predict_f_batch(features)[0])

    def predict_g(self, features) -> float:
        return float(self.predict_g_batch(features)[0])

    def extrapolation_mask(self, points) -> np.ndarray:
        """True per row when any feature falls outside the training range."""
        rows = self._rows(points)
        lo, hi = self.feature_ranges[:, 0], self.feature_ranges[:, 1]
        return ((rows < lo) | (rows > hi)).any(axis=1)

    def is_extrapolating(self, features) -> bool:
        return bool(self.extrapolation_mask(features)[0])

    def to_dict(self) -> dict:
        return {
            "vt_model": self.vt_model.to_dict(),
            "ct_model": self.ct_model.to_dict(),
            "latency_model": self.latency_model.to_dict(),
            "feature_ranges": self.feature_ranges.tolist(),
            "fit_report": self.fit_report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerformancePredictor":
        return cls(BoostedEnsemble.from_dict(d["vt_model"]),
                   PolynomialModel.from_dict(d["ct_model"]),
                   RegressionTree.from_dict(d["latency_model"]),
                   d["feature_ranges"], d.get("fit_report"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PerformancePredictor":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict_f(predictor, features) -> float:
    """Storing time (validation + committing) in seconds, clamped >= 0."""
    if not getattr(predictor, "fitted", False):
        raise PredictorNotFittedError("predictor has not been fitted")
    return predictor.predict_f(features)


def predict_g(predictor, features) -> float:
    """Latency in seconds, clamped >= 0."""
    if not getattr(predictor, "fitted", False):
        raise PredictorNotFittedError("predictor has not been fitted")
    return predictor.predict_g(features)


def fit_predictor(samples, config: SurrogateConfig = SurrogateConfig()
                  ) -> PerformancePredictor:
    """Fit all three models on ``samples``.

    With ``holdout_fraction`` > 0 the models are fitted on a deterministic
    train split and the report carries both train and holdout MSE per
    target; otherwise everything trains on the full set.
    """
    if not samples:
        raise FitError("cannot fit a predictor on an empty sample list")
    points, vt, ct, lat = samples_to_arrays(samples)

    n = points.shape[0]
    if 0 < config.holdout_fraction < 1 and n >= 10:
        rng = np.random.default_rng(config.rng_seed)
        order = rng.permutation(n)
        n_hold = max(1, int(round(config.holdout_fraction * n)))
        hold, train = order[:n_hold], order[n_hold:]
    else:
        train = np.arange(n)
        hold = np.empty(0, dtype=np.int64)

    tp = points[train]
    vt_model = fit_boosted((tp, vt[train]), rounds=config.boost_rounds,
                           learning_rate=config.boost_learning_rate,
                           tree_depth=config.boost_tree_depth,
                           min_samples_leaf=config.boost_min_samples_leaf)
    ct_model = fit_polynomial((tp, ct[train]), degree=config.poly_degree)
    latency_model = fit_tree((tp, lat[train]), max_depth=config.tree_max_depth,
                             min_samples_leaf=config.tree_min_samples_leaf)

    ranges = np.column_stack([points.min(axis=0), points.max(axis=0)])

    def _mse(model, idx, target):
        if idx.size == 0:
            return None
        return float(np.mean((model.predict(points[idx]) - target[idx]) ** 2))

    report = {
        "n_samples": int(n),
        "n_train": int(train.size),
        "n_holdout": int(hold.size),
        "train_mse": {"vt": _mse(vt_model, train, vt),
                      "ct": _mse(ct_model, train, ct),
                      "latency": _mse(latency_model, train, lat)},
        "holdout_mse": {"vt": _mse(vt_model, hold, vt),
                        "ct": _mse(ct_model, hold, ct),
                        "latency": _mse(latency_model, hold, lat)},
    }
    return PerformancePredictor(vt_model, ct_model, latency_model, ranges, report)
