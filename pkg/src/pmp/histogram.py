"""Differentiable soft histogram of latent weights and the discrete KL budget loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .distributions import DiscreteLaw

EPS = 1e-8


@dataclass(frozen=True)
class BinGrid:
    centers: np.ndarray
    widths: np.ndarray  # beta_k

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        b = np.asarray(self.widths, dtype=np.float64)
        if c.ndim != 1 or c.size < 2 or b.shape != c.shape:
            raise ValueError("a bin grid needs K >= 2 centers and matching widths")
        if np.any(np.diff(c) <= 0) or np.any(b <= 0):
            raise ValueError("centers must increase strictly and widths be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", b)

    @property
    def K(self) -> int:
        return self.centers.size

    @property
    def omega(self) -> tuple[float, float]:
        half = self.centers[1] - self.centers[0]
        return (float(self.centers[0] - half / 2), float(self.centers[-1] + half / 2))

    def same_as(self, bins) -> bool:
        bins = np.asarray(bins)
        return bins.shape == self.centers.shape and np.allclose(bins, self.centers, rtol=0, atol=1e-12)

    def shifted(self, delta: float) -> "BinGrid":
        return BinGrid(self.centers + delta, self.widths)


def make_grid(omega_min: float = -1.0, omega_max: float = 1.0, K: int = 100) -> BinGrid:
    """K equal cells tiling [omega_min, omega_max]; centers at cell midpoints."""
    if K < 2:
        raise ValueError(f"need K >= 2 bins, got {K}")
    if not omega_min < omega_max:
        raise ValueError(f"empty support [{omega_min}, {omega_max}]")
    step = (omega_max - omega_min) / K
    centers = omega_min + step * (np.arange(K) + 0.5)
    return BinGrid(centers, np.full(K, step / 2))


def widths_from_centers(centers) -> np.ndarray:
    """beta_k = (q_{k+1} - q_k)/2, the last bin reusing the preceding gap."""
    gaps = np.diff(np.asarray(centers, dtype=np.float64))
    return np.append(gaps, gaps[-1]) / 2


@dataclass
class SoftHistogram:
    grid: BinGrid
    mass: ad.Tensor  # shape (K,), normalized

    def numpy(self) -> np.ndarray:
        return self.mass.data.copy()


def _flat_latents(layers) -> ad.Tensor:
    parts = [ad.reshape(_latent(l), (-1,)) for l in layers]
    if not parts:
        raise ValueError("soft histogram of no layers")
    return parts[0] if len(parts) == 1 else ad.concat(parts)


def _latent(layer) -> ad.Tensor:
    return layer.latent if hasattr(layer, "latent") else ad.as_tensor(layer)


BAND = 5  # neighbours evaluated on each side; dropped terms are < exp(-4 * BAND**2)


def _is_uniform(grid: BinGrid) -> bool:
    gaps = np.diff(grid.centers)
    return np.allclose(gaps, gaps[0], rtol=1e-9, atol=0) and np.allclose(grid.widths, gaps[0] / 2)


def kernel_mass(w: ad.Tensor, grid: BinGrid, chunk: int = 8192) -> ad.Tensor:
    """Unnormalized mass_k = sum_i exp(-(w_i - q_k)^2 / beta_k^2) as one fused op.

    On a uniform grid with beta = gap/2 only the BAND nearest bins on each
    side of a weight are evaluated; other grids use the dense evaluation.
    """
    if _is_uniform(grid):
        return _kernel_mass_banded(w, grid)
    return _kernel_mass_dense(w, grid, chunk)


def _kernel_mass_banded(w: ad.Tensor, grid: BinGrid) -> ad.Tensor:
    q = grid.centers
    h = q[1] - q[0]
    inv_b2 = 1.0 / grid.widths[0] ** 2
    K = grid.K
    x = w.data.reshape(-1)
    base = np.floor((x - q[0]) / h).astype(np.int64)
    offs = np.arange(-BAND, BAND + 2)
    k = base[:, None] + offs[None, :]
    valid = (k >= 0) & (k < K)
    kc = np.clip(k, 0, K - 1)
    d = x[:, None] - q[kc]
    ker = np.where(valid, np.exp(-(d * d) * inv_b2), 0.0)
    mass = np.bincount(kc.reshape(-1), weights=ker.reshape(-1), minlength=K)

    def backward_fn(g):
        return ((-2.0 * inv_b2 * (ker * d) * g[kc]).sum(axis=1).reshape(w.shape),)

    return ad._make(mass, (w,), backward_fn, "kernel_mass")


def soft_assignment_mass(w: ad.Tensor, grid: BinGrid, chunk: int = 8192) -> ad.Tensor:
    """mass_k = sum_i ker_ik / sum_j ker_ij, so each weight spreads exactly one unit.

    Unlike summed kernels, a weight's total contribution does not depend on
    where it sits relative to the bin centers, and weights outside the grid
    still land on the edge bins.
    """
    x = w.data.reshape(-1)
    if _is_uniform(grid):
        q = grid.centers
        h = q[1] - q[0]
        base = np.clip(np.floor((x - q[0]) / h).astype(np.int64), BAND, grid.K - BAND - 2)
        k = base[:, None] + np.arange(-BAND, BAND + 2)[None, :]
        valid = (k >= 0) & (k < grid.K)
        kc = np.clip(k, 0, grid.K - 1)
        assign, dz = _assign_rows(x, q[kc], grid.widths[kc], valid)
        mass = np.bincount(kc.reshape(-1), weights=assign.reshape(-1), minlength=grid.K)

        def backward_fn(g):
            return (_assign_grad(assign, dz, g[kc]).reshape(w.shape),)
    else:
        mass = np.zeros(grid.K)
        cols = np.broadcast_to(grid.centers, (min(chunk, x.size), grid.K))
        wid = np.broadcast_to(grid.widths, cols.shape)
        for s in range(0, x.size, chunk):
            xs = x[s:s + chunk]
            a, _ = _assign_rows(xs, cols[:xs.size], wid[:xs.size], None)
            mass += a.sum(axis=0)

        def backward_fn(g):
            out = np.empty_like(x)
            for s in range(0, x.size, chunk):
                xs = x[s:s + chunk]
                a, dz = _assign_rows(xs, cols[:xs.size], wid[:xs.size], None)
                out[s:s + chunk] = _assign_grad(a, dz, g[None, :])
            return (out.reshape(w.shape),)

    return ad._make(mass, (w,), backward_fn, "soft_assignment")


def _assign_rows(x, centers, widths, valid):
    d = x[:, None] - centers
    inv_b2 = 1.0 / widths ** 2
    z = -(d * d) * inv_b2
    if valid is not None:
        z = np.where(valid, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    ker = np.exp(z)
    assign = ker / ker.sum(axis=1, keepdims=True)
    return assign, -2.0 * inv_b2 * d  # dz_ik / dw_i


def _assign_grad(assign, dz, g):
    mean_dz = (assign * dz).sum(axis=1, keepdims=True)
    return (assign * (dz - mean_dz) * g).sum(axis=1)


def _kernel_mass_dense(w: ad.Tensor, grid: BinGrid, chunk: int = 8192) -> ad.Tensor:
    q = grid.centers
    inv_b2 = 1.0 / grid.widths ** 2
    x = w.data.reshape(-1)
    mass = np.zeros(grid.K)
    for s in range(0, x.size, chunk):
        d = x[s:s + chunk, None] - q[None, :]
        mass += np.exp(-(d * d) * inv_b2).sum(axis=0)

    def backward_fn(g):
        out = np.empty_like(x)
        coef = g * inv_b2
        for s in range(0, x.size, chunk):
            d = x[s:s + chunk, None] - q[None, :]
            k = np.exp(-(d * d) * inv_b2)
            out[s:s + chunk] = -2.0 * (k * d) @ coef
        return (out.reshape(w.shape),)

    return ad._make(mass, (w,), backward_fn, "kernel_mass")


def kernel_mass_reference(w: ad.Tensor, grid: BinGrid) -> ad.Tensor:
    """Same quantity composed from primitive ops (outer products via matmul)."""
    col = ad.reshape(w, (-1, 1))
    n = col.shape[0]
    ones_k = np.ones((1, grid.K))
    diff = ad.matmul(col, ones_k) - ad.matmul(np.ones((n, 1)), grid.centers[None, :])
    z = ad.mul(ad.square(diff), -np.broadcast_to(1.0 / grid.widths ** 2, (n, grid.K)).copy())
    return ad.sum(ad.exp(z), axis=0)


def soft_assignment_reference(w: ad.Tensor, grid: BinGrid) -> ad.Tensor:
    """Per-weight normalized mass composed from primitive ops; oracle for the fused op."""
    col = ad.reshape(w, (-1, 1))
    n = col.shape[0]
    diff = ad.matmul(col, np.ones((1, grid.K))) - ad.matmul(np.ones((n, 1)), grid.centers[None, :])
    z = ad.mul(ad.square(diff), -np.broadcast_to(1.0 / grid.widths ** 2, (n, grid.K)).copy())
    # constant row shift against underflow; the ratio below is invariant to it
    ker = ad.exp(z - np.broadcast_to(z.data.max(axis=1, keepdims=True), z.shape).copy())
    row = ad.reciprocal(ad.matmul(ker, np.ones((grid.K, 1))))
    return ad.sum(ker * ad.matmul(row, np.ones((1, grid.K))), axis=0)


ESTIMATORS = ("assign", "kernel")


def soft_histogram(layers: Sequence, grid: BinGrid, estimator: str = "assign",
                   fused: bool = True) -> SoftHistogram:
    """Normalized soft histogram Q over all entries of ``layers``.

    ``layers`` may hold LatentLayers or raw tensors. ``estimator="assign"``
    normalizes each weight's Gaussian responses before summing, so every weight
    counts once; ``"kernel"`` sums the raw responses. Both are renormalized.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown histogram estimator {estimator!r}")
    w = _flat_latents(layers)
    if estimator == "assign":
        raw = soft_assignment_mass(w, grid) if fused else soft_assignment_reference(w, grid)
    else:
        raw = kernel_mass(w, grid) if fused else kernel_mass_reference(w, grid)
    total = ad.sum(raw)
    return SoftHistogram(grid, raw * ad.reciprocal(total))


def hard_histogram(values, grid: BinGrid) -> np.ndarray:
    """Normalized counts of values per grid cell (outliers go to edge cells)."""
    c = grid.centers
    edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
    counts, _ = np.histogram(np.asarray(values).reshape(-1), bins=edges)
    return counts / counts.sum()


def kld(p: DiscreteLaw, q: SoftHistogram) -> ad.Tensor:
    """sum_k p_k (ln p_k - ln max(q_k, eps)) in nats; empty target bins contribute 0."""
    if not q.grid.same_as(p.bins):
        raise ValueError("target law and soft histogram use different bin grids")
    pk = p.probs
    nz = pk > 0
    const = float(np.sum(pk[nz] * np.log(pk[nz])))
    logq = ad.log(ad.maximum_const(q.mass, EPS))
    return const - ad.sum(ad.mul(logq, pk))


def kld_numpy(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), EPS)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))
