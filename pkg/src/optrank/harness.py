"""Sample-size sweeps: targets (or widths, or init stds) x n x trials.

Every cell (row, n, trial) gets its own generator state derived from the
master seed through ``np.random.SeedSequence(seed, spawn_key=(row, n, trial))``,
so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, OptRankError, RunDirError
from .model_zoo import ModelFamily
from .rank import closed_form_optimistic
from .targets import get_target, target_id
from .trainer import TEST, TrainConfig, gd_fit, lr_search, sample_dataset

SCHEMA = "optrank.sweep/1"
RUN_SCHEMA = "optrank.run/1"
TEST_SPAWN_KEY = 2**32 - 1

MANIFEST = "manifest.json"
GRID_CSV = "grid.csv"
MEAN_CSV = "mean.csv"
TRANSITIONS_CSV = "transitions.csv"

GRID_COLUMNS = ["row_id", "n", "trial", "test_mse", "converged", "iters", "lr",
                "diverged", "train_mse", "data_seed", "init_seed"]


@dataclass(frozen=True)
class SweepSpec:
    """One sweep. Rows run over ``targets``; or over ``widths`` / ``init_stds``
    when those are given, in which case exactly one target is allowed."""

    family: ModelFamily
    targets: tuple
    sample_sizes: tuple
    trials: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_grid: tuple | None = None
    fit_threshold: float = 1e-4
    seed: int = 0
    widths: tuple | None = None
    init_stds: tuple | None = None
    test_size: int = 1000
    exclude_diverged: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        for name in ("lr_grid", "widths", "init_stds"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not self.targets:
            raise ConfigError("at least one target is required")
        sizes = self.sample_sizes
        if not sizes or any(n < 0 for n in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("sample_sizes must be non-negative and strictly increasing")
        if self.widths is not None and self.init_stds is not None:
            raise ConfigError("widths and init_stds cannot both define the rows")
        if (self.widths is not None or self.init_stds is not None) and len(self.targets) != 1:
            raise ConfigError("width and init-std sweeps take a single target")
        if self.widths is not None and (not self.widths or any(int(w) != w or w < 1 for w in self.widths)):
            raise ConfigError("widths must be positive integers")
        if self.init_stds is not None and (not self.init_stds or any(s < 0 for s in self.init_stds)):
            raise ConfigError("init_stds must be non-negative")
        if self.lr_grid is not None and (not self.lr_grid or any(lr < 0 for lr in self.lr_grid)):
            raise ConfigError("lr_grid must be a non-empty list of non-negative rates")
        if not self.fit_threshold > 0:
            raise ConfigError("fit_threshold must be positive")
        if self.test_size < 0:
            raise ConfigError("test_size must be non-negative")
        for t in self.targets:
            try:
                get_target(t)
            except OptRankError as exc:
                raise ConfigError(f"bad target {t!r}: {exc}") from exc

    # --- rows ----------------------------------------------------------

    @property
    def row_axis(self) -> str:
        if self.widths is not None:
            return "width"
        if self.init_stds is not None:
            return "init_std"
        return "target"

    @property
    def n_rows(self) -> int:
        return len(self.rows())

    def rows(self) -> list:
        if self.widths is not None:
            return [int(w) for w in self.widths]
        if self.init_stds is not None:
            return [float(s) for s in self.init_stds]
        return list(self.targets)

    def row_labels(self) -> list[str]:
        axis = self.row_axis
        if axis == "width":
            return [f"width={w}" for w in self.rows()]
        if axis == "init_std":
            return [f"std={s:g}" for s in self.rows()]
        return [target_id(t) for t in self.targets]

    def row_setup(self, row: int):
        """(family, target, train config) used by every cell of ``row``."""
        family, cfg = self.family, self.train
        target = get_target(self.targets[0 if self.row_axis != "target" else row])
        if self.widths is not None:
            family = family.with_width(int(self.widths[row]))
        if self.init_stds is not None:
            cfg = replace(cfg, init_std=float(self.init_stds[row]))
        return family, target, cfg

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA,
            "name": self.name,
            "family": self.family.to_dict(),
            "targets": list(self.targets),
            "sample_sizes": list(self.sample_sizes),
            "trials": self.trials,
            "train": self.train.to_dict(),
            "fit_threshold": self.fit_threshold,
            "seed": self.seed,
            "test_size": self.test_size,
            "exclude_diverged": self.exclude_diverged,
        }
        for key in ("lr_grid", "widths", "init_stds"):
            value = getattr(self, key)
            if value is not None:
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        if not isinstance(data, dict):
            raise ConfigError("a sweep spec must be a JSON object")
        data = dict(data)
        schema = data.pop("schema", None)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported sweep schema {schema!r} (expected {SCHEMA!r})")
        known = {"name", "family", "targets", "sample_sizes", "trials", "train", "lr_grid",
                 "fit_threshold", "seed", "widths", "init_stds", "test_size", "exclude_diverged"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep spec fields: {sorted(unknown)}")
        for key in ("family", "targets", "sample_sizes"):
            if key not in data:
                raise ConfigError(f"sweep spec is missing {key!r}")
        try:
            data["family"] = ModelFamily.from_dict(data["family"])
            data["train"] = TrainConfig.from_dict(data.get("train", {}))
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def load_spec(path) -> SweepSpec:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read spec file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file {path} is not valid JSON: {exc}") from exc
    return SweepSpec.from_dict(data)


def bundled_spec_path(name: str) -> Path:
    """Path of a spec file shipped with the package (``fig2`` or ``fig2.spec``)."""
    stem = name[:-5] if name.endswith(".spec") else name
    path = Path(__file__).parent / "specs" / f"{stem}.spec"
    if not path.is_file():
        raise ConfigError(f"no bundled spec named {name!r}")
    return path


# --- running -------------------------------------------------------------------


def cell_seeds(master_seed: int, row: int, n: int, trial: int) -> tuple[int, int]:
    """(data seed, init seed) of one cell."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(row), int(n), int(trial)))
    data_seed, init_seed = ss.generate_state(2, dtype=np.uint32)
    return int(data_seed), int(init_seed)


def test_seed(master_seed: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(TEST_SPAWN_KEY,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_cell(spec: SweepSpec, row: int, n: int, trial: int, test) -> dict:
    family, target, cfg = spec.row_setup(row)
    data_seed, init_seed = cell_seeds(spec.seed, row, n, trial)
    train = sample_dataset(target, n, seed=data_seed)
    cfg = replace(cfg, seed=init_seed, trace_every=0)
    if spec.lr_grid:
        res = lr_search(family, train, test, cfg, spec.lr_grid)
    else:
        res = gd_fit(family, train, test, cfg)
    return {
        "test_mse": float(res.test_mse),
        "train_mse": float(res.train_mse),
        "converged": bool(res.converged),
        "diverged": bool(res.diverged),
        "iters": int(res.iterations),
        "lr": float(res.learning_rate),
        "data_seed": data_seed,
        "init_seed": init_seed,
    }


def _test_sets(spec: SweepSpec) -> list:
    seed = test_seed(spec.seed)
    return [sample_dataset(spec.row_setup(r)[1], spec.test_size, seed=seed, split=TEST)
            for r in range(spec.n_rows)]


def _run_chunk(spec_dict: dict, cells: list) -> list:
    spec = SweepSpec.from_dict(spec_dict)
    tests = _test_sets(spec)
    return [_run_cell(spec, r, n, t, tests[r]) for r, n, t in cells]


def run_sweep(spec: SweepSpec, workers: int = 1, progress=None) -> "SweepGrid":
    """Train every (row, n, trial) cell; ``progress(done, total)`` is optional."""
    rows, sizes, T = spec.n_rows, spec.sample_sizes, spec.trials
    cells = [(r, n, t) for r in range(rows) for n in sizes for t in range(T)]
    results: list = [None] * len(cells)
    workers = max(1, int(workers))
    if workers == 1:
        tests = _test_sets(spec)
        for i, (r, n, t) in enumerate(cells):
            results[i] = _run_cell(spec, r, n, t, tests[r])
            if progress:
                progress(i + 1, len(cells))
    else:
        # Contiguous chunks keep per-process setup small; order is restored by index.
        n_chunks = min(len(cells), workers * 8)
        bounds = np.linspace(0, len(cells), n_chunks + 1).astype(int)
        spec_dict = spec.to_dict()
        done = 0
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(lo, pool.submit(_run_chunk, spec_dict, cells[lo:hi]))
                       for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for lo, fut in futures:
                chunk = fut.result()
                results[lo:lo + len(chunk)] = chunk
                done += len(chunk)
                if progress:
                    progress(done, len(cells))
    return SweepGrid.from_records(spec, results)


def run_variance_sweep(spec: SweepSpec, workers: int = 1, progress=None) -> "SweepGrid":
    if spec.init_stds is None:
        raise ConfigError("a variance sweep needs init_stds")
    return run_sweep(spec, workers, progress)


# --- results -------------------------------------------------------------------


@dataclass
class SweepGrid:
    """Per-cell outcomes as (rows, sizes, trials) arrays plus the generating spec."""

    spec: SweepSpec
    test_mse: np.ndarray
    train_mse: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray
    iterations: np.ndarray
    lr: np.ndarray
    data_seed: np.ndarray
    init_seed: np.ndarray

    @classmethod
    def from_records(cls, spec: SweepSpec, records: list) -> "SweepGrid":
        shape = (spec.n_rows, len(spec.sample_sizes), spec.trials)

        def take(key, dtype):
            return np.array([rec[key] for rec in records], dtype=dtype).reshape(shape)

        return cls(spec, take("test_mse", float), take("train_mse", float), take("converged", bool),
                   take("diverged", bool), take("iters", np.int64), take("lr", float),
                   take("data_seed", np.int64), take("init_seed", np.int64))

    @property
    def row_labels(self) -> list[str]:
        return self.spec.row_labels()

    @property
    def sample_sizes(self) -> tuple:
        return self.spec.sample_sizes

    @property
    def mean_test_error(self) -> np.ndarray:
        """Mean over trials. Diverged runs count unless the spec excludes them;
        a cell whose every run was excluded is NaN."""
        if not self.spec.exclude_diverged:
            with np.errstate(invalid="ignore"):
                return self.test_mse.mean(axis=2)
        keep = ~self.diverged
        total = np.where(keep, self.test_mse, 0.0).sum(axis=2)
        count = keep.sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    @property
    def diverged_count(self) -> np.ndarray:
        return self.diverged.sum(axis=2)

    @property
    def converged_count(self) -> np.ndarray:
        return self.converged.sum(axis=2)

    def optimistic(self) -> list:
        """Closed-form optimistic size per row, or None when no closed form applies."""
        out = []
        for r in range(self.spec.n_rows):
            family, target, _ = self.spec.row_setup(r)
            # Bias terms do not enter the closed forms; use the bias-free network.
            if getattr(family, "bias", False):
                family = replace(family, bias=False)
            try:
                out.append(int(closed_form_optimistic(family, target)))
            except OptRankError:
                out.append(None)
        return out

    def __eq__(self, other):
        if not isinstance(other, SweepGrid):
            return NotImplemented
        arrays = ("test_mse", "train_mse", "converged", "diverged", "iterations", "lr", "data_seed", "init_seed")
        return self.spec.to_dict() == other.spec.to_dict() and all(
            np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a in ("test_mse", "train_mse", "lr"))
            for a in arrays
        )


@dataclass
class TransitionRow:
    row_id: int
    label: str
    empirical_n: int | None
    optimistic_n: int | None
    gap: int | None
    flagged: bool = False


@dataclass
class TransitionReport:
    rows: list
    fit_threshold: float

    def empirical(self) -> list:
        return [r.empirical_n for r in self.rows]

    def to_rows(self) -> list[list]:
        def fmt(v):
            return "" if v is None else str(v)

        return [[r.row_id, r.label, fmt(r.empirical_n), fmt(r.optimistic_n), fmt(r.gap), int(r.flagged)]
                for r in self.rows]

    def table(self) -> str:
        lines = [f"{'row':<16} {'empirical_n':>11} {'optimistic_n':>12} {'gap':>5}"]
        for r in self.rows:
            emp = "-" if r.empirical_n is None else str(r.empirical_n)
            opt = "?" if r.optimistic_n is None else str(r.optimistic_n)
            gap = "-" if r.gap is None else f"{r.gap:+d}"
            lines.append(f"{r.label:<16} {emp:>11} {opt:>12} {gap:>5}")
        return "\n".join(lines)


def first_crossing(means, sizes, threshold: float) -> int | None:
    for n, value in zip(sizes, means):
        if value < threshold:
            return int(n)
    return None


def detect_transitions(grid: SweepGrid, ranks=None) -> TransitionReport:
    """First n per row whose mean test error drops below the fit threshold.

    ``ranks`` are the optimistic sizes per row (default: closed forms);
    rows without one are flagged and get no gap.
    """
    if ranks is None:
        ranks = grid.optimistic()
    ranks = list(ranks)
    labels = grid.row_labels
    if len(ranks) != len(labels):
        raise ConfigError(f"{len(ranks)} optimistic values for {len(labels)} rows")
    means = grid.mean_test_error
    rows = []
    for r, label in enumerate(labels):
        emp = first_crossing(means[r], grid.sample_sizes, grid.spec.fit_threshold)
        opt = ranks[r]
        gap = emp - opt if emp is not None and opt is not None else None
        rows.append(TransitionRow(r, label, emp, opt, gap, flagged=opt is None))
    return TransitionReport(rows, grid.spec.fit_threshold)


# --- run directories -------------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def persist(grid: SweepGrid, out_dir, report: TransitionReport | None = None) -> Path:
    """Write manifest, per-cell grid, mean matrix and transitions to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = grid.spec
    if report is None:
        report = detect_transitions(grid)
    manifest = {
        "schema": RUN_SCHEMA,
        "spec": spec.to_dict(),
        "row_axis": spec.row_axis,
        "row_labels": grid.row_labels,
        "optimistic_n": [r.optimistic_n for r in report.rows],
        "seed_scheme": "SeedSequence(seed, spawn_key=(row, n, trial)).generate_state(2) -> (data_seed, init_seed); "
                       "test set seed SeedSequence(seed, spawn_key=(2**32-1,)).generate_state(1)",
        "test_seed": test_seed(spec.seed),
        "shape": list(grid.test_mse.shape),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")

    with open(out / GRID_CSV, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS)
        for r in range(grid.test_mse.shape[0]):
            for j, n in enumerate(spec.sample_sizes):
                for t in range(spec.trials):
                    w.writerow([r, n, t, _f(grid.test_mse[r, j, t]), int(grid.converged[r, j, t]),
                                int(grid.iterations[r, j, t]), _f(grid.lr[r, j, t]),
                                int(grid.diverged[r, j, t]), _f(grid.train_mse[r, j, t]),
                                int(grid.data_seed[r, j, t]), int(grid.init_seed[r, j, t])])

    means = grid.mean_test_error
    with open(out / MEAN_CSV, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "label", "n", "mean_test_mse", "converged_count", "diverged_count"])
        for r, label in enumerate(grid.row_labels):
            for j, n in enumerate(spec.sample_sizes):
                w.writerow([r, label, n, _f(means[r, j]), int(grid.converged_count[r, j]),
                            int(grid.diverged_count[r, j])])

    write_transitions(report, out / TRANSITIONS_CSV)
    return out


def write_transitions(report: TransitionReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "label", "empirical_n", "optimistic_n", "gap", "flagged"])
        w.writerows(report.to_rows())


def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise RunDirError(f"run directory is missing {path.name}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load(run_dir) -> SweepGrid:
    """Rebuild a :class:`SweepGrid` from a run directory written by :func:`persist`."""
    run = Path(run_dir)
    if not run.is_dir():
        raise RunDirError(f"{run} is not a directory")
    path = run / MANIFEST
    if not path.is_file():
        raise RunDirError(f"run directory is missing {MANIFEST}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RunDirError(f"{MANIFEST} is not valid JSON: {exc}") from exc
    if manifest.get("schema") != RUN_SCHEMA:
        raise RunDirError(f"unsupported run schema {manifest.get('schema')!r}")
    spec = SweepSpec.from_dict(manifest["spec"])
    shape = (spec.n_rows, len(spec.sample_sizes), spec.trials)
    index = {n: j for j, n in enumerate(spec.sample_sizes)}

    rows = _read_csv(run / GRID_CSV)
    if len(rows) != math.prod(shape):
        raise RunDirError(f"{GRID_CSV} has {len(rows)} cells, expected {math.prod(shape)}")
    records: list = [None] * len(rows)
    try:
        for rec in rows:
            r, n, t = int(rec["row_id"]), int(rec["n"]), int(rec["trial"])
            if not (0 <= r < shape[0] and n in index and 0 <= t < shape[2]):
                raise RunDirError(f"{GRID_CSV} cell ({r}, {n}, {t}) is outside the grid")
            records[(r * shape[1] + index[n]) * shape[2] + t] = {
                "test_mse": float(rec["test_mse"]),
                "train_mse": float(rec["train_mse"]),
                "converged": bool(int(rec["converged"])),
                "diverged": bool(int(rec["diverged"])),
                "iters": int(rec["iters"]),
                "lr": float(rec["lr"]),
                "data_seed": int(rec["data_seed"]),
                "init_seed": int(rec["init_seed"]),
            }
    except (KeyError, ValueError) as exc:
        raise RunDirError(f"malformed {GRID_CSV}: {exc}") from exc
    if any(rec is None for rec in records):
        raise RunDirError(f"{GRID_CSV} has duplicate cells")
    grid = SweepGrid.from_records(spec, records)

    means = grid.mean_test_error
    try:
        for rec in _read_csv(run / MEAN_CSV):
            stored = float(rec["mean_test_mse"])
            value = means[int(rec["row_id"]), index[int(rec["n"])]]
            same = (np.isnan(stored) and np.isnan(value)) or stored == value or abs(stored - value) <= 1e-12
            if not same:
                raise RunDirError(f"{MEAN_CSV} disagrees with the grid at row {rec['row_id']}, n {rec['n']}")
    except (KeyError, ValueError) as exc:
        raise RunDirError(f"malformed {MEAN_CSV}: {exc}") from exc
    return grid


def load_transitions(run_dir) -> list[dict]:
    return _read_csv(Path(run_dir) / TRANSITIONS_CSV)
