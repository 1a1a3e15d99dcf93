"""Full-batch gradient descent on the mean squared error."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import ConfigError, TargetError
from .model_zoo import Kind, ModelFamily, all_entries, as_inputs, evaluate_batch
from .targets import TargetSpec, evaluate_target_batch

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    target_id: str | None = None
    seed: int | None = None
    split: str = TRAIN

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs differ in length")
        if self.split not in (TRAIN, TEST):
            raise ValueError(f"split must be {TRAIN!r} or {TEST!r}")

    def __len__(self):
        return len(self.outputs)


def sample_dataset(t: TargetSpec, n: int, seed: int = 0, split: str = TRAIN) -> Dataset:
    """Draw ``n`` labelled points from target ``t``.

    Function targets: i.i.d. standard-normal inputs. Matrix targets: ``n``
    distinct entries uniformly without replacement; the test split of a
    matrix target is always the full set of d^2 entries.
    """
    n = int(n)
    family = t.family
    rng = np.random.default_rng(seed)
    if family.kind == Kind.MF:
        entries = all_entries(family.d)
        if split == TEST:
            X = entries
        else:
            if not 0 <= n <= len(entries):
                raise TargetError(f"cannot observe {n} entries of a {family.d}x{family.d} matrix")
            X = entries[np.sort(rng.choice(len(entries), n, replace=False))]
    else:
        if n < 0:
            raise TargetError("sample size must be non-negative")
        X = rng.standard_normal((n, family.input_dim))
    y = evaluate_target_batch(t, X) if len(X) else np.zeros(0)
    return Dataset(X, y, t.name, seed, split)


@dataclass(frozen=True)
class TrainConfig:
    init_std: float = 1e-4
    learning_rate: float = 0.05
    stop_train_mse: float = 1e-9
    max_iters: int = 2_000_000
    seed: int = 0
    warmup_iters: int = 0
    trace_every: int = 0

    def __post_init__(self):
        if self.init_std < 0:
            raise ConfigError("init_std must be non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0 < self.stop_train_mse < 1:
            raise ConfigError("stop_train_mse must lie in (0, 1)")
        if self.max_iters < 0 or self.warmup_iters < 0 or self.trace_every < 0:
            raise ConfigError("iteration counts must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainResult:
    theta: np.ndarray
    train_mse: float
    test_mse: float
    iterations: int
    converged: bool
    diverged: bool = False
    learning_rate: float = 0.0
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "learning_rate": self.learning_rate,
        }

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "train_mse"])
            for it, mse in self.trace:
                writer.writerow([int(it), repr(float(mse))])


def _test_mse(family: ModelFamily, theta: np.ndarray, test: Dataset) -> float:
    if len(test) == 0:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        r = evaluate_batch(family, theta, test.inputs) - test.outputs
        value = float(np.mean(r * r))
    return value if np.isfinite(value) else float("inf")


def gd_fit(family: ModelFamily, train: Dataset, test: Dataset, cfg: TrainConfig) -> TrainResult:
    """Fit ``train`` from a N(0, init_std^2) start by plain full-batch GD.

    Stops once the training MSE is at most ``stop_train_mse``, after
    ``max_iters`` updates, or on divergence (MSE above 1e6 or non-finite);
    the latter is reported through ``diverged``, never raised.
    """
    rng = np.random.default_rng(cfg.seed)
    theta = rng.standard_normal(family.n_params) * cfg.init_std
    if len(train) == 0:
        return TrainResult(theta, 0.0, _test_mse(family, theta, test), 0, True, False, cfg.learning_rate)
    X = as_inputs(family, train.inputs)
    y = np.ascontiguousarray(train.outputs, dtype=float)
    mse, iters, status, trace = K.gd_loop(
        family._code(), family._dims(), theta, X, y,
        float(cfg.learning_rate), float(cfg.stop_train_mse), int(cfg.max_iters),
        int(cfg.warmup_iters), int(cfg.trace_every),
    )
    diverged = status == K.STATUS_DIVERGED
    test_mse = float("inf") if diverged else _test_mse(family, theta, test)
    return TrainResult(theta, float(mse), test_mse, int(iters), status == K.STATUS_CONVERGED,
                       diverged, cfg.learning_rate, trace)


def lr_search(family: ModelFamily, train: Dataset, test: Dataset, base_cfg: TrainConfig,
              lr_grid) -> TrainResult:
    """Run :func:`gd_fit` per learning rate and keep the best run.

    Best means smallest test MSE among converged runs; when none converged,
    smallest train MSE among runs that did not diverge; when all diverged,
    the first run (flagged diverged).
    """
    lr_grid = list(lr_grid)
    if not lr_grid:
        raise ConfigError("lr_grid must not be empty")
    results = [gd_fit(family, train, test, replace(base_cfg, learning_rate=float(lr))) for lr in lr_grid]
    converged = [r for r in results if r.converged]
    if converged:
        return min(converged, key=lambda r: r.test_mse)
    alive = [r for r in results if not r.diverged]
    if alive:
        return min(alive, key=lambda r: r.train_mse)
    return results[0]

