"""Per-depth error trajectories and monotonicity diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .network import ResidualNetwork, forward_collect, truncated_predict
from .surfaces import Dataset
from .training import mae, mse

__all__ = [
    "DepthRecord",
    "ErrorTrajectory",
    "MonotonicityReport",
    "Scores",
    "error_trajectory",
    "monotonicity",
    "evaluate",
    "write_trajectory_csv",
    "write_trajectory_gnuplot",
]


class Scores(NamedTuple):
    mse: float
    mae: float


class DepthRecord(NamedTuple):
    depth: int
    mse: float
    mae: float
    mean_l2: float
    max_l2: float


@dataclass
class ErrorTrajectory:
    per_depth: list
    dataset_id: str = ""
    model_id: str = ""

    def __post_init__(self):
        depths = [r.depth for r in self.per_depth]
        if depths != list(range(len(depths))):
            raise ValueError(f"depths must run 0..N without gaps, got {depths}")

    @property
    def n_blocks(self) -> int:
        return len(self.per_depth) - 1

    @property
    def mse(self) -> np.ndarray:
        return np.array([r.mse for r in self.per_depth])

    @classmethod
    def from_mse(cls, values, **ids) -> "ErrorTrajectory":
        """Trajectory carrying only MSE values (other columns NaN)."""
        nan = float("nan")
        return cls([DepthRecord(i, float(v), nan, nan, nan) for i, v in enumerate(values)], **ids)


@dataclass
class MonotonicityReport:
    delta: float
    start_depth: int
    n_blocks: int
    violations: list = field(default_factory=list)

    @property
    def fraction_nonincreasing(self) -> float:
        return 1.0 - len(self.violations) / self.n_blocks


def _dataset_arrays(net: ResidualNetwork, dataset: Dataset):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    y = dataset.targets.reshape(len(dataset), -1)
    if y.shape[1] != net.dims.d_y:
        raise ValueError(f"dataset targets have width {y.shape[1]}, network d_y is {net.dims.d_y}")
    return dataset.inputs, y


def _record(depth, pred, y) -> DepthRecord:
    err = np.sqrt(np.sum((pred - y) ** 2, axis=1))
    return DepthRecord(depth, mse(pred, y), mae(pred, y), float(np.mean(err)), float(np.max(err)))


def error_trajectory(net: ResidualNetwork, dataset: Dataset, model_id: str = "") -> ErrorTrajectory:
    """Errors of the shared-readout prediction at every depth 0..N.

    ``mse``/``mae`` average over samples and output components; ``mean_l2``
    and ``max_l2`` are the mean and worst per-sample Euclidean errors.
    """
    x, y = _dataset_arrays(net, dataset)
    fs = forward_collect(net, x)
    records = [_record(i, s @ net.readout.T, y) for i, s in enumerate(fs.states)]
    return ErrorTrajectory(records, dataset_id=dataset.name, model_id=model_id)


def evaluate(net: ResidualNetwork, dataset: Dataset, depth: int) -> Scores:
    x, y = _dataset_arrays(net, dataset)
    pred = truncated_predict(net, x, depth)
    return Scores(mse(pred, y), mae(pred, y))


def monotonicity(traj: ErrorTrajectory, delta: float = 0.05, start_depth: int = 1) -> MonotonicityReport:
    """Flag depths where MSE grows by more than a factor ``1 + delta``.

    Compares depth i with i+1 for i = start_depth..N-1.
    """
    n = traj.n_blocks
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if not 0 <= start_depth <= n - 1:
        raise ValueError(f"start_depth must be in 0..{n - 1}, got {start_depth}")
    m = traj.mse
    report = MonotonicityReport(delta=float(delta), start_depth=start_depth, n_blocks=n)
    for i in range(start_depth, n):
        if m[i + 1] > (1.0 + delta) * m[i]:
            ratio = m[i + 1] / m[i] if m[i] > 0 else float("inf")
            report.violations.append((i + 1, float(ratio)))
    return report


_COLUMNS = ["depth", "mse", "mae", "mean_l2", "max_l2"]


def write_trajectory_csv(traj: ErrorTrajectory, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_COLUMNS)
            for r in traj.per_depth:
                w.writerow([r.depth, *(f"{v:.17g}" for v in r[1:])])
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc.strerror or exc}") from exc


def write_trajectory_gnuplot(traj: ErrorTrajectory, path) -> None:
    """Whitespace-separated columns with a ``#`` header, for ``plot 'f' using 1:2``."""
    path = Path(path)
    try:
        with open(path, "w") as fh:
            fh.write(f"# model: {traj.model_id}  data: {traj.dataset_id}\n")
            fh.write("# " + " ".join(_COLUMNS) + "\n")
            for r in traj.per_depth:
                fh.write(f"{r.depth} " + " ".join(f"{v:.17g}" for v in r[1:]) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc.strerror or exc}") from exc
