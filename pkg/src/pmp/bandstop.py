"""Band-stop reparametrization of latent weights.

Effective weights are ``w_hat * psi(w_hat)`` with
``psi(w) = 1 / (1 + sigma * exp(a**2 - w**2))``, a smooth symmetric gate that
is close to 0 for small magnitudes and close to 1 for large ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class BandStopConfig:
    a: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.a >= 0:
            raise ValueError(f"band-stop threshold a must be >= 0, got {self.a}")
        if not self.sigma > 0:
            raise ValueError(f"band-stop sigma must be > 0, got {self.sigma}")

    @property
    def half_point(self) -> float:
        """|w| at which psi = 1/2, i.e. sqrt(a^2 + ln sigma) (0 if that is imaginary)."""
        return math.sqrt(max(0.0, self.a ** 2 + math.log(self.sigma)))


class LatentLayer:
    """A trainable latent tensor gated by a (model-wide) band-stop config."""

    def __init__(self, latent, config: BandStopConfig, name: str | None = None):
        self.latent = latent if isinstance(latent, ad.Tensor) else ad.parameter(latent, name)
        if name is not None:
            self.latent.name = name
        self.config = config
        if not self.latent.is_finite():
            raise ValueError("latent weights must be finite")

    @property
    def name(self):
        return self.latent.name

    @property
    def shape(self):
        return self.latent.shape

    @property
    def size(self) -> int:
        return self.latent.size

    def __repr__(self):
        return f"LatentLayer({self.name!r}, shape={self.shape}, a={self.config.a:g})"


def band_stop(w_hat, cfg: BandStopConfig):
    """psi_{a,sigma} on floats or numpy arrays."""
    z = np.clip(cfg.a ** 2 - np.square(w_hat), -EXP_CLAMP, EXP_CLAMP)
    out = 1.0 / (1.0 + cfg.sigma * np.exp(z))
    return float(out) if np.ndim(out) == 0 else out


def band_stop_tensor(w_hat: ad.Tensor, cfg: BandStopConfig) -> ad.Tensor:
    z = ad.clamp(cfg.a ** 2 - ad.square(w_hat), -EXP_CLAMP, EXP_CLAMP)
    return ad.reciprocal(1.0 + cfg.sigma * ad.exp(z))


def gated(w_hat: ad.Tensor, cfg: BandStopConfig) -> ad.Tensor:
    """w_hat * psi(w_hat), differentiable through both factors."""
    return w_hat * band_stop_tensor(w_hat, cfg)


def effective_weights(layer: LatentLayer) -> ad.Tensor:
    return gated(layer.latent, layer.config)


def prune_mask(w_hat: np.ndarray, a: float) -> np.ndarray:
    """Boolean keep-mask: True where |w_hat| > a (ties are pruned)."""
    return np.abs(w_hat) > a


def hard_export(layer: LatentLayer) -> np.ndarray:
    """Inference weights: zero where |w_hat| <= a, w_hat * psi(w_hat) elsewhere."""
    w = layer.latent.data
    return np.where(prune_mask(w, layer.config.a), w * band_stop(w, layer.config), 0.0)


def observed_pruning_rate(layers: Sequence[LatentLayer]) -> float:
    total = sum(layer.size for layer in layers)
    if total == 0:
        raise ValueError("observed pruning rate of an empty model")
    pruned = sum(int(np.count_nonzero(~prune_mask(l.latent.data, l.config.a))) for l in layers)
    return pruned / total


def psi_curve(cfg: BandStopConfig, omega=(-1.0, 1.0), points: int = 400) -> np.ndarray:
    """Columns (w_hat, psi, w_hat * psi) sampled over ``omega``."""
    w = np.linspace(omega[0], omega[1], points)
    psi = band_stop(w, cfg)
    return np.column_stack([w, psi, w * psi])


def geometric_sigma(sigma0: float, rho: float, epoch: int) -> float:
    """Optional annealing schedule sigma(t) = sigma0 * rho**t."""
    return sigma0 * rho ** epoch
