"""Training of the pruning objective, the magnitude-pruning baseline, and evaluation."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .bandstop import BandStopConfig, observed_pruning_rate
from .data import Dataset
from .distributions import DiscreteLaw, TargetDistribution, discretize, threshold_for_rate
from .gcn import GcnConfig, GcnModel, cross_entropy, forward_batch, init_model
from .histogram import BinGrid, kld, make_grid, soft_histogram

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "loss", "ce", "kld", "observed_pr", "lr", "test_acc")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lam: float = 10.0
    rate: float = 0.0
    target: TargetDistribution = field(default_factory=lambda: TargetDistribution.gaussian(0.0, 1.0))
    omega: tuple[float, float] = (-3.0, 3.0)
    K: int = 100
    lr0: float = 0.002
    lr_min: float = 2e-5
    lr_max: float = 0.01
    seed: int = 0
    quantile_mode: str = "magnitude"
    sigma0: float = 1.0
    sigma_decay: float = 1.0
    init: str = "target"  # "target": sample latents from the truncated target; "uniform"
    init_range: float = 0.5
    retrain_epochs: int | None = None  # MP stage 2; None -> epochs
    histogram: str = "assign"  # soft-histogram estimator, see histogram.soft_histogram
    project: bool = True  # clip latents into omega after every step (PMP only)

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"rate must satisfy 0 <= r < 1, got {self.rate}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.lr_min <= self.lr0 <= self.lr_max:
            raise ValueError("learning rates must satisfy 0 < lr_min <= lr0 <= lr_max")
        if self.epochs < 0 or self.batch_size < 1 or self.K < 2:
            raise ValueError("epochs >= 0, batch_size >= 1 and K >= 2 required")
        if self.quantile_mode not in ("magnitude", "signed"):
            raise ValueError(f"unknown quantile mode {self.quantile_mode!r}")
        if not self.omega[0] < self.omega[1]:
            raise ValueError("omega must be an increasing pair")
        self.omega = (float(self.omega[0]), float(self.omega[1]))
        if self.init not in ("target", "uniform"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.histogram not in ("assign", "kernel"):
            raise ValueError(f"unknown histogram estimator {self.histogram!r}")
        if self.sigma0 <= 0 or self.sigma_decay <= 0:
            raise ValueError("sigma0 and sigma_decay must be positive")

    def truncated_target(self) -> TargetDistribution:
        return self.target.truncated(*self.omega)

    def sampler(self):
        return self.truncated_target().sample if self.init == "target" else None

    def threshold(self) -> float:
        return threshold_for_rate(self.truncated_target(), self.rate, self.quantile_mode)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[ad.Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[ad.Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update; parameter arrays are replaced, not mutated."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for {p!r}: grad {g.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)


@dataclass
class LrState:
    lr: float
    lr_min: float = 2e-5
    lr_max: float = 0.01
    prev_loss: float | None = None
    prev_speed: float | None = None
    factor: float = 0.99


def adaptive_lr(state: LrState, new_loss: float) -> LrState:
    """Shrink the rate when the loss changes faster than before, grow it otherwise."""
    if state.prev_loss is None:
        return replace(state, prev_loss=new_loss)
    speed = abs(new_loss - state.prev_loss)
    if state.prev_speed is None:
        return replace(state, prev_loss=new_loss, prev_speed=speed)
    lr = state.lr * state.factor if speed > state.prev_speed else state.lr / state.factor
    lr = min(state.lr_max, max(state.lr_min, lr))
    return replace(state, lr=lr, prev_loss=new_loss, prev_speed=speed)


# -------------------------------------------------------------------- losses

def global_loss(model: GcnModel, x: np.ndarray, y: np.ndarray, p: DiscreteLaw | None, lam: float,
                grid: BinGrid | None = None, estimator: str = "assign") -> tuple[ad.Tensor, ad.Tensor, ad.Tensor | None]:
    """Cross-entropy on effective weights + lam * KL(P || Q(latents)).

    Returns (total, cross_entropy, kld); kld is None when lam == 0 or p is None.
    """
    if len(y) == 0:
        raise ValueError("empty batch")
    ce = cross_entropy(forward_batch(model, x), y)
    if lam == 0 or p is None:
        return ce, ce, None
    grid = grid if grid is not None else BinGrid(p.bins, np.full(p.K, (p.bins[1] - p.bins[0]) / 2))
    d = kld(p, soft_histogram(model.latent_layers, grid, estimator))
    return ce + lam * d, ce, d


def kld_value(model: GcnModel, p: DiscreteLaw, grid: BinGrid, estimator: str = "assign") -> float:
    latents = [ad.Tensor(l.latent.data) for l in model.latent_layers]
    return kld(p, soft_histogram(latents, grid, estimator)).item()


# ---------------------------------------------------------------- evaluation

def predict(model: GcnModel, x: np.ndarray, exported: bool = True, batch: int = 256) -> np.ndarray:
    weights = None
    if exported:
        weights = {k: ad.Tensor(v) for k, v in model.exported_weights().items()}
    out = []
    for s in range(0, len(x), batch):
        logits = forward_batch(model, x[s:s + batch], weights).data
        out.append(np.argmax(logits, axis=1))  # ties -> lowest class index
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def macro_accuracy(pred: np.ndarray, y: np.ndarray, classes: int | None = None) -> float:
    pred, y = np.asarray(pred), np.asarray(y)
    if y.size == 0:
        raise ValueError("accuracy of an empty sample set")
    present = np.unique(y)
    if classes is not None and present.size < classes:
        missing = sorted(set(range(classes)) - set(present.tolist()))
        warnings.warn(f"classes {missing} absent from samples; excluded from the macro average")
    return float(np.mean([np.mean(pred[y == c] == c) for c in present]))


def evaluate(model: GcnModel, samples, exported: bool = True) -> float:
    """Macro-averaged per-class accuracy (``samples``: GraphSample list or (x, y))."""
    if isinstance(samples, tuple):
        x, y = samples
    else:
        if not samples:
            raise ValueError("accuracy of an empty sample set")
        x = np.stack([s.node_signal for s in samples])
        y = np.array([s.label for s in samples])
    return macro_accuracy(predict(model, x, exported), y, model.config.classes)


# ------------------------------------------------------------------ training

@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    threshold: float = 0.0
    kld_decreased: bool | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    @property
    def final(self) -> dict:
        return self.rows[-1] if self.rows else {}


def default_gcn_config(dataset: Dataset, **overrides) -> GcnConfig:
    kw = dict(n=dataset.n, s_raw=dataset.s, classes=dataset.classes, adjacency_init=dataset.adjacency)
    kw.update(overrides)
    return GcnConfig(**kw)


def _run_epochs(model: GcnModel, dataset: Dataset, cfg: TrainConfig, epochs: int, *,
                p: DiscreteLaw | None, grid: BinGrid | None, lam: float, rng: np.random.Generator,
                history: History, epoch0: int = 0, grad_masks: dict | None = None,
                clip: tuple[float, float] | None = None,
                on_epoch: Callable[[dict], None] | None = None) -> None:
    x, y = dataset.arrays("train")
    xt, yt = dataset.arrays("test")
    if len(y) == 0:
        raise ValueError("dataset has no training samples")
    params = model.parameters
    adam = AdamState.zeros_like(params)
    lrs = LrState(cfg.lr0, cfg.lr_min, cfg.lr_max)
    for e in range(epochs):
        epoch = epoch0 + e
        if cfg.sigma_decay != 1.0 and model.gate:
            model.set_band(BandStopConfig(model.band.a, cfg.sigma0 * cfg.sigma_decay ** epoch))
        perm = rng.permutation(len(y))
        tot = ce_sum = kl_sum = 0.0
        nb = 0
        for s in range(0, len(y), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss, ce, d = global_loss(model, x[idx], y[idx], p, lam, grid,
                                      cfg.histogram)
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"loss became {loss.item()} at epoch {epoch}",
                                       {"epoch": epoch, "history": list(history.rows),
                                        "model": model})
            grads = ad.backward(loss, params)
            glist = [grads[q] for q in params]
            if grad_masks is not None:
                for i, q in enumerate(params):
                    if q.name in grad_masks:
                        glist[i] = glist[i] * grad_masks[q.name]
            adam_step(params, glist, adam, lrs.lr)
            bad = [q.name for q in params if not np.all(np.isfinite(q.data))]
            if bad:
                # relu and the histogram binning would silently absorb NaN weights
                raise TrainingDiverged(f"non-finite parameters {bad} at epoch {epoch}",
                                       {"epoch": epoch, "history": list(history.rows),
                                        "model": model})
            if clip is not None:
                for layer in model.latent_layers:
                    layer.latent.data = np.clip(layer.latent.data, clip[0], clip[1])
            tot += loss.item()
            ce_sum += ce.item()
            kl_sum += d.item() if d is not None else 0.0
            nb += 1
        row = {
            "epoch": epoch,
            "loss": tot / nb,
            "ce": ce_sum / nb,
            "kld": kl_sum / nb if p is not None and lam > 0 else (kld_value(model, p, grid, cfg.histogram) if p is not None else 0.0),
            "observed_pr": _observed_rate(model),
            "lr": lrs.lr,
            "test_acc": evaluate(model, (xt, yt)) if len(yt) else float("nan"),
        }
        lrs = adaptive_lr(lrs, row["loss"])
        history.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)


def _observed_rate(model: GcnModel) -> float:
    if model.gate:
        return observed_pruning_rate(model.latent_layers)
    if model.masks is None:
        return 0.0
    total = sum(m.size for m in model.masks.values())
    return float(sum(np.count_nonzero(m == 0) for m in model.masks.values()) / total)


def train_pmp(dataset: Dataset, gcn_config: GcnConfig, cfg: TrainConfig,
              on_epoch: Callable[[dict], None] | None = None) -> tuple[GcnModel, History]:
    """Single-stage training of topology and weights towards the target law.

    The band-stop threshold is fixed once from the (truncated) target's
    quantile at ``cfg.rate``; the KL term pulls the latent histogram onto it.
    """
    a = cfg.threshold()
    model = init_model(gcn_config, BandStopConfig(a, cfg.sigma0), seed=cfg.seed,
                       init_range=cfg.init_range, sampler=cfg.sampler())
    grid = make_grid(cfg.omega[0], cfg.omega[1], cfg.K)
    p = discretize(cfg.truncated_target(), grid.centers, grid.omega)
    history = History(threshold=a)
    rng = np.random.default_rng([cfg.seed, 1])
    _run_epochs(model, dataset, cfg, cfg.epochs, p=p, grid=grid, lam=cfg.lam, rng=rng,
                history=history, on_epoch=on_epoch, clip=cfg.omega if cfg.project else None)
    if history.rows and cfg.lam > 0:
        first, last = history.rows[0]["kld"], history.rows[-1]["kld"]
        history.kld_decreased = last < first
        log.info("KLD %.4g -> %.4g (%s)", first, last, "decreased" if last < first else "did not decrease")
    return model, history


def magnitude_prune_mask(model: GcnModel, rate: float) -> dict[str, np.ndarray]:
    """Zero the globally smallest-|w| fraction ``rate`` of prunable entries.

    Ties are broken by flat position (layer order, then row-major), lowest first.
    """
    layers = model.latent_layers
    flat = np.concatenate([l.latent.data.reshape(-1) for l in layers])
    k = int(round(rate * flat.size))
    order = np.argsort(np.abs(flat), kind="stable")
    keep = np.ones(flat.size)
    keep[order[:k]] = 0.0
    masks, s = {}, 0
    for l in layers:
        masks[l.name] = keep[s:s + l.size].reshape(l.shape)
        s += l.size
    return masks


def train_mp_baseline(dataset: Dataset, gcn_config: GcnConfig, cfg: TrainConfig,
                      on_epoch: Callable[[dict], None] | None = None) -> tuple[GcnModel, History]:
    """Two-stage magnitude pruning: dense training, global magnitude cut, masked retraining."""
    model = init_model(gcn_config, BandStopConfig(0.0, 1.0), seed=cfg.seed,
                       init_range=cfg.init_range, gate=False, sampler=cfg.sampler())
    history = History()
    rng = np.random.default_rng([cfg.seed, 1])
    _run_epochs(model, dataset, cfg, cfg.epochs, p=None, grid=None, lam=0.0, rng=rng,
                history=history, on_epoch=on_epoch)
    if cfg.rate > 0:
        masks = magnitude_prune_mask(model, cfg.rate)
        history.threshold = float(max((np.abs(l.latent.data) * (masks[l.name] == 0)).max()
                                      for l in model.latent_layers))
        for l in model.latent_layers:
            l.latent.data = l.latent.data * masks[l.name]
        model.masks = masks
        retrain = cfg.epochs if cfg.retrain_epochs is None else cfg.retrain_epochs
        _run_epochs(model, dataset, cfg, retrain, p=None, grid=None, lam=0.0, rng=rng,
                    history=history, epoch0=cfg.epochs, grad_masks=masks, on_epoch=on_epoch)
    return model, history


def train_dense(dataset: Dataset, gcn_config: GcnConfig, cfg: TrainConfig, **kw):
    return train_mp_baseline(dataset, gcn_config, replace(cfg, rate=0.0), **kw)
