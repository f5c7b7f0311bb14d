"""Losses, gradients, Adam and the training loop for both paradigms.

E2E supervises only the final depth.  LPA supervises every depth through
the shared readout with loss ``sum_i lam_i * MSE(R x_i, y)``.  Both go
through the same kernel: E2E is the weight vector (0, ..., 0, 1).
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .network import Gradients, ResidualNetwork, forward_collect, predict
from .rng import MASK64, Xoshiro256pp, derive_seed
from .surfaces import Dataset

__all__ = [
    "Paradigm",
    "TrainConfig",
    "default_lambdas",
    "mse",
    "mae",
    "lpa_batch_loss",
    "e2e_batch_loss",
    "backward",
    "OptimizerState",
    "adam_step",
    "EpochRecord",
    "TrainHistory",
    "train",
    "GradCheckReport",
    "check_gradients",
    "grad_check",
    "NonFiniteLossError",
    "TrainingDivergedError",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12


class Paradigm(enum.Enum):
    E2E = "e2e"
    LPA = "lpa"

    @classmethod
    def parse(cls, name) -> "Paradigm":
        if isinstance(name, Paradigm):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown paradigm {name!r}; choose 'e2e' or 'lpa'") from None


def default_lambdas(n_blocks: int) -> tuple[float, ...]:
    """0.1 for every intermediate depth, 1.0 for the last."""
    return (0.1,) * (n_blocks - 1) + (1.0,)


@dataclass(frozen=True)
class TrainConfig:
    paradigm: Paradigm = Paradigm.LPA
    lambdas: tuple | None = None
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "paradigm", Paradigm.parse(self.paradigm))
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
            if any(not math.isfinite(v) or v < 0 for v in self.lambdas):
                raise ValueError(f"lambda weights must be finite and >= 0, got {self.lambdas}")
            if self.paradigm is Paradigm.LPA and not any(v > 0 for v in self.lambdas):
                raise ValueError("LPA needs at least one positive lambda weight")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if int(self.epochs) < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def resolved_lambdas(self, n_blocks: int) -> tuple[float, ...]:
        lam = self.lambdas if self.lambdas is not None else default_lambdas(n_blocks)
        if len(lam) != n_blocks:
            raise ValueError(f"lambda has {len(lam)} entries but the network has {n_blocks} blocks")
        return lam

    def head_weights(self, n_blocks: int) -> np.ndarray:
        """Per-depth loss weights actually used by the backward pass."""
        if self.paradigm is Paradigm.E2E:
            w = np.zeros(n_blocks)
            w[-1] = 1.0
            return w
        return np.array(self.resolved_lambdas(n_blocks), dtype=np.float64)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, loss, batch_index=None):
        where = "" if batch_index is None else f" in batch {batch_index}"
        super().__init__(f"non-finite loss {loss}{where}")
        self.loss = loss
        self.batch_index = batch_index


class TrainingDivergedError(FloatingPointError):
    def __init__(self, loss, epoch, step):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: loss {loss}")
        self.loss = loss
        self.epoch = epoch
        self.step = step


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    r = pred - target
    return float(np.mean(r * r))


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def _as_batch(batch, net: ResidualNetwork):
    if isinstance(batch, Dataset):
        x, y = batch.inputs, batch.targets
    else:
        x, y = batch
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    y = y.reshape(x.shape[0], -1)
    if x.shape[1] != net.dims.d_in or y.shape[1] != net.dims.d_y:
        raise ValueError(
            f"batch shapes {x.shape}/{y.shape} do not match d_in={net.dims.d_in}, d_y={net.dims.d_y}"
        )
    return x, y


def lpa_batch_loss(net: ResidualNetwork, batch, lam) -> tuple[float, np.ndarray]:
    """``(sum_i lam_i * L_i, [L_1..L_N])`` with L_i the batch MSE at depth i."""
    x, y = _as_batch(batch, net)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (net.n_blocks,):
        raise ValueError(f"lambda must have {net.n_blocks} entries, got {lam.shape}")
    fs = forward_collect(net, x)
    per_layer = np.array([mse(s @ net.readout.T, y) for s in fs.states[1:]])
    loss = 0.0
    for w, li in zip(lam.tolist(), per_layer.tolist()):
        if w != 0.0:
            loss += w * li
    return float(loss), per_layer


def e2e_batch_loss(net: ResidualNetwork, batch) -> float:
    x, y = _as_batch(batch, net)
    return mse(predict(net, x), y)


def _loss_grad(net, x, y, weights, kernels):
    grad = Gradients(net.dims)
    loss, per_layer = kernels.loss_grad(net.theta, *net.dims.kernel_args(), x, y, weights, grad.theta)
    return loss, per_layer, grad


def backward(net: ResidualNetwork, batch, config: TrainConfig, batch_index=None, kernels=None) -> Gradients:
    """Exact gradient of the configured loss on ``batch``."""
    x, y = _as_batch(batch, net)
    kernels = kernels or _backend.kernels
    loss, _, grad = _loss_grad(net, x, y, config.head_weights(net.n_blocks), kernels)
    if not math.isfinite(loss):
        raise NonFiniteLossError(loss, batch_index)
    return grad


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "OptimizerState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(net: ResidualNetwork, grads: Gradients, state: OptimizerState, config: TrainConfig) -> None:
    """One bias-corrected Adam update of ``net.theta`` in place."""
    g = grads.theta
    if g.shape != net.theta.shape or state.m.shape != net.theta.shape or state.v.shape != net.theta.shape:
        raise ValueError(
            f"shape mismatch: params {net.theta.shape}, grads {g.shape}, moments {state.m.shape}/{state.v.shape}"
        )
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    net.theta -= config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    total_loss: float
    layer_losses: tuple
    test_mse: float
    test_mae: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    wall_clock_s: float = field(default=0.0, compare=False)
    backend: str = field(default="", compare=False)

    def __len__(self):
        return len(self.records)

    def csv_rows(self) -> list[list[str]]:
        n = len(self.records[0].layer_losses) if self.records else 0
        rows = [["epoch", "total_loss", *[f"loss_{i}" for i in range(1, n + 1)], "test_mse", "test_mae"]]
        for r in self.records:
            rows.append([
                str(r.epoch),
                f"{r.total_loss:.17g}",
                *[f"{v:.17g}" for v in r.layer_losses],
                f"{r.test_mse:.17g}",
                f"{r.test_mae:.17g}",
            ])
        return rows

    def to_csv(self, path) -> None:
        path = Path(path)
        try:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())
        except OSError as exc:
            raise OSError(f"cannot write history to {path}: {exc.strerror or exc}") from exc


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order for ``epoch``; depends only on (seed, epoch)."""
    return Xoshiro256pp(derive_seed(seed, epoch)).permutation(n)


def train(net: ResidualNetwork, train_set: Dataset, test_set: Dataset, config: TrainConfig,
          kernels=None, on_epoch=None) -> TrainHistory:
    """Run ``config.epochs`` epochs of minibatch Adam, updating ``net`` in place.

    Batches follow a fresh Fisher-Yates order each epoch.  ``on_epoch`` is
    called with each :class:`EpochRecord` as it is produced.
    """
    kernels = kernels or _backend.kernels
    weights = config.head_weights(net.n_blocks)
    x_all, y_all = _as_batch(train_set, net)
    x_test, y_test = _as_batch(test_set, net)
    n = x_all.shape[0]
    bs = int(config.batch_size)
    state = OptimizerState.zeros(net.dims.n_params)
    history = TrainHistory(backend="python" if kernels is _backend._pykernels else "cython")
    t0 = time.perf_counter()

    for epoch in range(1, int(config.epochs) + 1):
        order = epoch_permutation(n, config.seed, epoch)
        loss_sum = 0.0
        layer_sum = np.zeros(net.n_blocks)
        for step, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            xb = x_all[idx]
            yb = y_all[idx]
            loss, per_layer, grad = _loss_grad(net, xb, yb, weights, kernels)
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDivergedError(loss, epoch, step)
            adam_step(net, grad, state, config)
            loss_sum += loss * idx.shape[0]
            layer_sum += per_layer * idx.shape[0]
        pred = predict(net, x_test)
        rec = EpochRecord(
            epoch=epoch,
            total_loss=loss_sum / n,
            layer_losses=tuple((layer_sum / n).tolist()),
            test_mse=mse(pred, y_test),
            test_mae=mae(pred, y_test),
        )
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    history.wall_clock_s = time.perf_counter() - t0
    return history


# -- finite-difference verification -------------------------------------------

class _PerturbedLoss:
    """Loss after nudging one parameter, evaluated in extended precision.

    Runs on numpy ``longdouble`` (64-bit mantissa on x86) so that the
    central difference is not swamped by float64 rounding of the loss when
    the loss is large.  Unperturbed prefix states are cached: nudging a
    parameter of block j only recomputes blocks j..N and their heads.
    """

    def __init__(self, net: ResidualNetwork, x, y, weights):
        ld = np.longdouble
        self.dims = net.dims
        self.params = net.copy_as(ld)
        self.x = x.astype(ld)
        self.y = y.astype(ld)
        self.weights = [float(w) for w in weights]
        d = net.dims
        self.pre_end = d.d * d.d_in + d.d
        self.readout_start = self.pre_end + d.n_blocks * d.block_size
        self.states, self.masks = self._forward_from(0, self._preprocess())
        self.head_losses = self._head_losses(self.states, 1)

    def _preprocess(self):
        p = self.params
        return self.x @ p.preproc_w.T + p.preproc_b

    def _forward_from(self, j, h):
        states, masks = [h], []
        for b in self.params.blocks[j:]:
            z = h @ b.w_in.T + b.b_in
            masks.append(z > 0.0)
            h = h + (np.maximum(z, 0.0) @ b.w_out.T + b.b_out)
            states.append(h)
        return states, masks

    def _head_losses(self, states, first_depth):
        out = {}
        for depth, h in enumerate(states, start=first_depth - 1):
            if depth >= 1 and self.weights[depth - 1] != 0.0:
                r = h @ self.params.readout.T - self.y
                out[depth] = np.mean(r * r)
        return out

    def _total(self, head_losses):
        total = np.longdouble(0.0)
        for depth in sorted(head_losses):
            total += np.longdouble(self.weights[depth - 1]) * head_losses[depth]
        return total

    def __call__(self, k: int, delta: float):
        """``(loss, kink_crossed)`` with parameter ``k`` shifted by ``delta``."""
        theta = self.params.theta
        orig = theta[k]
        theta[k] = orig + np.longdouble(delta)
        try:
            if k >= self.readout_start:
                return self._total(self._head_losses(self.states, 1)), False
            if k < self.pre_end:
                j, h = 0, self._preprocess()
            else:
                j = (k - self.pre_end) // self.dims.block_size
                h = self.states[j]
            states, masks = self._forward_from(j, h)
            kink = any(not np.array_equal(m, m0) for m, m0 in zip(masks, self.masks[j:]))
            losses = {dd: v for dd, v in self.head_losses.items() if dd <= j}
            losses.update(self._head_losses(states[1:], j + 2))
            return self._total(losses), kink
        finally:
            theta[k] = orig


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_kink_skipped: int
    worst_param: str


def check_gradients(net: ResidualNetwork, batch, config: TrainConfig, h: float = 1e-6, *,
                    grads: Gradients | None = None, max_params: int | None = None, seed: int = 0,
                    abs_floor: float = 1e-12, kernels=None) -> GradCheckReport:
    """Compare the backward pass with central differences.

    Relative error per parameter is ``|a - f| / max(|a|, |f|, abs_floor)``;
    ``abs_floor`` only guards the 0/0 case of exactly-zero gradients.
    Perturbed losses are evaluated in extended precision.  Parameters
    whose +-h perturbation flips any ReLU on or off are skipped,
    since the loss is not differentiable across that kink.  When the net
    has more than ``max_params`` parameters, a seeded random subset of that
    size is checked.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x, y = _as_batch(batch, net)
    weights = config.head_weights(net.n_blocks)
    if grads is None:
        grads = backward(net, (x, y), config, kernels=kernels)
    n = net.dims.n_params
    if max_params is not None and n > max_params:
        idx = np.sort(Xoshiro256pp(seed).permutation(n)[:max_params])
    else:
        idx = np.arange(n)

    oracle = _PerturbedLoss(net, x, y, weights)
    hl = np.longdouble(h)
    worst = 0.0
    worst_k = -1
    skipped = 0
    for k in idx.tolist():
        lp, kink_p = oracle(k, h)
        lm, kink_m = oracle(k, -h)
        if kink_p or kink_m:
            skipped += 1
            continue
        fd = float((lp - lm) / (2 * hl))
        an = float(grads.theta[k])
        err = abs(an - fd) / max(abs(an), abs(fd), abs_floor)
        if err > worst or worst_k < 0:
            worst, worst_k = err, k
    name = net.param_name(worst_k) if worst_k >= 0 else ""
    return GradCheckReport(worst, len(idx) - skipped, skipped, name)


def grad_check(net: ResidualNetwork, batch, config: TrainConfig, h: float = 1e-6, **kwargs) -> float:
    """Worst relative deviation between backward and central differences."""
    return check_gradients(net, batch, config, h, **kwargs).max_rel_error
