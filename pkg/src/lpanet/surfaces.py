"""Synthetic surface-fitting targets on the plane.

Eight closed-form functions f(x, y), uniform sampling from a seeded
xoshiro256++ stream, and a lossless CSV format (``x,y,f`` header, 17
significant digits).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import MASK64, Xoshiro256pp

__all__ = [
    "SurfaceId",
    "Domain",
    "DEFAULT_DOMAIN",
    "Dataset",
    "eval_target",
    "eval_grid",
    "sample_dataset",
    "train_test_split",
    "export_csv",
    "import_csv",
    "CsvFormatError",
]


class SurfaceId(enum.Enum):
    ANISOTROPIC_RADIAL = "anisotropic-radial"
    DAMPED_RIPPLES = "damped-ripples"
    EXPONENTIAL_SADDLE = "exponential-saddle"
    QUAD_WARPED = "quad-warped"
    STANDING_WAVE_GRID = "standing-wave-grid"
    ASYMMETRIC_POWER_WAVE = "asymmetric-power-wave"
    LOCALIZED_STRIPES = "localized-stripes"
    LOG_CENTRAL_WELL = "log-central-well"

    @classmethod
    def parse(cls, name: str) -> "SurfaceId":
        key = name.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key or member.name.lower().replace("_", "-") == key:
                return member
        choices = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown surface {name!r}; choose from {choices}")


def _anisotropic_radial(x, y):
    return math.sin(4.0 * x * x + y * y) / math.sqrt(x * x + y * y + 0.001)


def _damped_ripples(x, y):
    r2 = x * x + y * y
    return math.sin(10.0 * r2) / (r2 + 0.1)


def _exponential_saddle(x, y):
    return math.exp(x * x - y * y)


def _quad_warped(x, y):
    return math.sin(5.0 * x * x) + math.cos(3.0 * y * y)


def _standing_wave_grid(x, y):
    return math.sin(3.0 * x) * math.cos(3.0 * y)


def _asymmetric_power_wave(x, y):
    return (abs(x) ** 0.7 + abs(y) ** 1.3) * math.sin(4.0 * x)


def _localized_stripes(x, y):
    return math.exp(-5.0 * (x * x + y * y)) * math.sin(10.0 * x)


def _log_central_well(x, y):
    return math.log(x * x + y * y + 1e-5) * math.cos(5.0 * x)


_TARGETS = {
    SurfaceId.ANISOTROPIC_RADIAL: _anisotropic_radial,
    SurfaceId.DAMPED_RIPPLES: _damped_ripples,
    SurfaceId.EXPONENTIAL_SADDLE: _exponential_saddle,
    SurfaceId.QUAD_WARPED: _quad_warped,
    SurfaceId.STANDING_WAVE_GRID: _standing_wave_grid,
    SurfaceId.ASYMMETRIC_POWER_WAVE: _asymmetric_power_wave,
    SurfaceId.LOCALIZED_STRIPES: _localized_stripes,
    SurfaceId.LOG_CENTRAL_WELL: _log_central_well,
}


def eval_target(surface: SurfaceId, x: float, y: float) -> float:
    return _TARGETS[surface](float(x), float(y))


def eval_grid(surface: SurfaceId, xs, ys) -> np.ndarray:
    """Evaluate pointwise over paired coordinate arrays (same values as ``eval_target``)."""
    fn = _TARGETS[surface]
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    return np.fromiter((fn(a, b) for a, b in zip(xs.tolist(), ys.tolist())), dtype=np.float64, count=xs.size)


@dataclass(frozen=True)
class Domain:
    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0

    def __post_init__(self):
        vals = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"domain bounds must be finite, got {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate domain {vals}")

    def contains(self, inputs: np.ndarray) -> bool:
        x, y = inputs[:, 0], inputs[:, 1]
        return bool(np.all((x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)))

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))


DEFAULT_DOMAIN = Domain()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired inputs (n x 2) and targets (n,).

    ``surface`` and ``domain`` are None for datasets read back from CSV,
    whose provenance the file does not record.
    """

    inputs: np.ndarray
    targets: np.ndarray
    surface: SurfaceId | None = None
    seed: int | None = None
    domain: Domain | None = DEFAULT_DOMAIN
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        targets = np.ascontiguousarray(self.targets, dtype=np.float64).reshape(-1)
        if inputs.ndim != 2 or inputs.shape[1] != 2:
            raise ValueError(f"inputs must have shape (n, 2), got {inputs.shape}")
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
        if self.domain is not None and inputs.shape[0] and not self.domain.contains(inputs):
            raise ValueError("inputs fall outside the dataset domain")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def name(self) -> str:
        if self.surface is None:
            return str(self.metadata.get("source", "unknown"))
        return f"{self.surface.value}@{self.seed}"

    def same_samples(self, other: "Dataset") -> bool:
        return np.array_equal(self.inputs, other.inputs) and np.array_equal(self.targets, other.targets)


def sample_dataset(surface: SurfaceId, n: int, seed: int, domain: Domain = DEFAULT_DOMAIN) -> Dataset:
    """Draw ``n`` points i.i.d. uniform over ``domain`` and evaluate the surface.

    The stream yields (x, y) pairs in order: draw 2k is x_k, draw 2k+1 is y_k.
    """
    if int(n) < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= int(seed) <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    u = Xoshiro256pp(seed).uniform(2 * int(n)).reshape(-1, 2)
    inputs = np.empty_like(u)
    inputs[:, 0] = domain.xmin + (domain.xmax - domain.xmin) * u[:, 0]
    inputs[:, 1] = domain.ymin + (domain.ymax - domain.ymin) * u[:, 1]
    targets = eval_grid(surface, inputs[:, 0], inputs[:, 1])
    return Dataset(inputs, targets, surface=surface, seed=int(seed), domain=domain)


def train_test_split(surface: SurfaceId, seed: int, n_train: int = 10_000, n_test: int = 10_000,
                     domain: Domain = DEFAULT_DOMAIN) -> tuple[Dataset, Dataset]:
    """Training set from ``seed``, test set from ``seed + 1``."""
    return (
        sample_dataset(surface, n_train, seed, domain),
        sample_dataset(surface, n_test, (int(seed) + 1) & MASK64, domain),
    )


class CsvFormatError(ValueError):
    pass


_HEADER = ["x", "y", "f"]


def export_csv(d: Dataset, path) -> None:
    path = Path(path)
    if str(path) in ("", "."):
        raise OSError(f"invalid output path {str(path)!r}")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_HEADER)
            for (x, y), f in zip(d.inputs.tolist(), d.targets.tolist()):
                w.writerow([f"{x:.17g}", f"{y:.17g}", f"{f:.17g}"])
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc.strerror or exc}") from exc


def import_csv(path) -> Dataset:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _HEADER:
            raise CsvFormatError(f"{path}: expected header 'x,y,f', got {','.join(header or [])!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CsvFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
    if not rows:
        raise CsvFormatError(f"{path}: no samples")
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :2], arr[:, 2], domain=None, metadata={"source": str(path)})
