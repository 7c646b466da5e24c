"""Target weight distributions: pdf, cdf, quantiles, and binning onto a grid.

Each law may be truncated to a finite support ``[lo, hi]``; the pdf and cdf
are then renormalized over it and the quantiles invert the truncated cdf.
Without a support the closed forms are used as-is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("uniform", "gaussian", "laplace")

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)


class DistributionError(ValueError):
    pass


# ------------------------------------------------------------- inverse error fn

def _erfinv_guess(x: float) -> float:
    # Giles (2010) single-precision rational approximation, ~1e-7 relative.
    w = -math.log((1.0 - x) * (1.0 + x))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
                  -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
            p = c + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
                  -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
            p = c + p * w
    return p * x


def inverse_erf(x: float) -> float:
    """Solve erf(y) = x for |x| < 1."""
    x = float(x)
    if not -1.0 < x < 1.0:
        raise DistributionError(f"inverse_erf needs |x| < 1, got {x}")
    if x == 0.0:
        return 0.0
    if x < 0:
        return -inverse_erf(-x)
    y = _erfinv_guess(x)
    # Newton on erf; second-order (Halley) correction keeps the tail stable.
    for _ in range(3):
        err = math.erf(y) - x
        if err == 0.0:
            break
        deriv = 2.0 / _SQRT_PI * math.exp(-y * y)
        step = err / deriv
        y -= step / (1.0 + y * step)
    return y


# ----------------------------------------------------------------- distributions

@dataclass(frozen=True)
class TargetDistribution:
    """A uniform / gaussian / laplace law, optionally truncated to ``support``.

    ``scale`` is the half-width T (uniform), the std sigma (gaussian) or b
    (laplace). ``loc`` is ignored for the uniform, which is centred at 0.
    """

    kind: str
    scale: float = 1.0
    loc: float = 0.0
    support: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DistributionError(f"unknown distribution kind {self.kind!r}")
        if not self.scale > 0:
            raise DistributionError(f"{self.kind} scale must be > 0, got {self.scale}")
        if self.kind == "uniform" and self.loc != 0.0:
            raise DistributionError("uniform law is centred at 0; loc must be 0")
        if self.support is not None:
            lo, hi = self.support
            if not lo < hi:
                raise DistributionError(f"support must satisfy lo < hi, got {self.support}")
            object.__setattr__(self, "support", (float(lo), float(hi)))
            if self._raw_cdf(hi) - self._raw_cdf(lo) <= 0:
                raise DistributionError("support carries no probability mass")

    @classmethod
    def uniform(cls, half_width: float = 1.0, support=None):
        return cls("uniform", half_width, 0.0, support)

    @classmethod
    def gaussian(cls, mu: float = 0.0, sigma: float = 1.0, support=None):
        return cls("gaussian", sigma, mu, support)

    @classmethod
    def laplace(cls, mu: float = 0.0, b: float = 1.0, support=None):
        return cls("laplace", b, mu, support)

    def truncated(self, lo: float, hi: float) -> "TargetDistribution":
        return TargetDistribution(self.kind, self.scale, self.loc, (lo, hi))

    @property
    def location(self) -> float:
        return self.loc

    @property
    def is_symmetric(self) -> bool:
        if self.support is None:
            return True
        lo, hi = self.support
        return math.isclose(self.loc - lo, hi - self.loc, rel_tol=1e-12, abs_tol=1e-12)

    # untruncated closed forms -------------------------------------------------
    def _raw_pdf(self, w: float) -> float:
        if self.kind == "uniform":
            T = self.scale
            return 1.0 / (2 * T) if -T <= w <= T else 0.0
        z = (w - self.loc) / self.scale
        if self.kind == "gaussian":
            return math.exp(-0.5 * z * z) / (self.scale * math.sqrt(2 * math.pi))
        return math.exp(-abs(z)) / (2 * self.scale)

    def _raw_cdf(self, w: float) -> float:
        if w == math.inf:
            return 1.0
        if w == -math.inf:
            return 0.0
        if self.kind == "uniform":
            T = self.scale
            return min(1.0, max(0.0, (w + T) / (2 * T)))
        z = (w - self.loc) / self.scale
        if self.kind == "gaussian":
            return 0.5 * math.erfc(-z / _SQRT2)
        return 0.5 * math.exp(z) if z <= 0 else 1.0 - 0.5 * math.exp(-z)

    def _raw_quantile(self, r: float) -> float:
        # Table-of-quantiles forms; uniform uses the cdf-consistent inverse on [-T, T].
        if self.kind == "uniform":
            return -self.scale + 2.0 * r * self.scale
        if self.kind == "gaussian":
            if r < 1e-3 or r > 1 - 1e-3:
                return self._tail_gaussian_quantile(r)
            return self.loc + self.scale * _SQRT2 * inverse_erf(2.0 * r - 1.0)
        if r <= 0.5:
            return self.loc + self.scale * math.log(2.0 * r)
        return self.loc - self.scale * math.log(2.0 - 2.0 * r)

    def _tail_gaussian_quantile(self, r: float) -> float:
        # 2r-1 loses digits near the tails; invert via erfc with Newton instead.
        lower = r < 0.5
        p = r if lower else 1.0 - r
        x = 2.0 * p - 1.0
        z = abs(_SQRT2 * inverse_erf(x)) if x > -1.0 else 38.0
        for _ in range(4):
            f = 0.5 * math.erfc(z / _SQRT2) - p
            d = -math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
            if d == 0:
                break
            z -= f / d
        return self.loc + self.scale * (-z if lower else z)

    # public -------------------------------------------------------------------
    def _mass_bounds(self) -> tuple[float, float]:
        if self.support is None:
            return 0.0, 1.0
        lo, hi = self.support
        return self._raw_cdf(lo), self._raw_cdf(hi)

    def pdf(self, w: float) -> float:
        if self.support is not None:
            lo, hi = self.support
            if not lo <= w <= hi:
                return 0.0
        c0, c1 = self._mass_bounds()
        return self._raw_pdf(w) / (c1 - c0)

    def cdf(self, w: float) -> float:
        if self.support is None:
            return self._raw_cdf(w)
        lo, hi = self.support
        if w <= lo:
            return 0.0
        if w >= hi:
            return 1.0
        c0, c1 = self._mass_bounds()
        return min(1.0, max(0.0, (self._raw_cdf(w) - c0) / (c1 - c0)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` samples; truncated laws use rejection."""
        out = np.empty(0)
        while out.size < n:
            m = max(n - out.size, 1)
            if self.kind == "uniform":
                x = rng.uniform(-self.scale, self.scale, size=m)
            elif self.kind == "gaussian":
                x = rng.normal(self.loc, self.scale, size=m)
            else:
                x = rng.laplace(self.loc, self.scale, size=m)
            if self.support is not None:
                x = x[(x >= self.support[0]) & (x <= self.support[1])]
            out = np.concatenate([out, x])
        return out[:n]


def pdf(dist: TargetDistribution, w: float) -> float:
    return dist.pdf(w)


def cdf(dist: TargetDistribution, w: float) -> float:
    return dist.cdf(w)


def quantile_signed(dist: TargetDistribution, r: float) -> float:
    """Threshold a with cdf(a) = r."""
    if not 0.0 < r < 1.0:
        raise DistributionError(f"quantile needs 0 < r < 1, got {r}")
    c0, c1 = dist._mass_bounds()
    return dist._raw_quantile(c0 + r * (c1 - c0))


def quantile_magnitude(dist: TargetDistribution, r: float) -> float:
    """Threshold a >= 0 with P(|w - loc| <= a) = r, for a symmetric law."""
    if not 0.0 <= r < 1.0:
        raise DistributionError(f"magnitude quantile needs 0 <= r < 1, got {r}")
    if not dist.is_symmetric:
        raise DistributionError("magnitude quantile requires a law symmetric about its location")
    if r == 0.0:
        return 0.0
    return max(0.0, quantile_signed(dist, 0.5 * (1.0 + r)) - dist.location)


def threshold_for_rate(dist: TargetDistribution, r: float, mode: str = "magnitude") -> float:
    """Band-stop threshold realizing pruning rate ``r`` under either budget reading."""
    if mode == "magnitude":
        return quantile_magnitude(dist, r)
    if mode == "signed":
        return 0.0 if r == 0.0 else quantile_signed(dist, r)
    raise DistributionError(f"unknown quantile mode {mode!r}")


# ------------------------------------------------------------------ discrete law

@dataclass(frozen=True)
class DiscreteLaw:
    bins: np.ndarray
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if bins.ndim != 1 or bins.size < 1 or bins.shape != probs.shape:
            raise DistributionError("bins and probs must be matching 1-d arrays")
        if np.any(np.diff(bins) <= 0):
            raise DistributionError("bins must be strictly increasing")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise DistributionError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "probs", probs)

    @property
    def K(self) -> int:
        return self.bins.size


def bin_edges(centers, omega: tuple[float, float] | None = None) -> np.ndarray:
    """Edges at midpoints between centers; outer edges at the support bounds."""
    c = np.asarray(centers, dtype=np.float64)
    mid = 0.5 * (c[1:] + c[:-1])
    if omega is None:
        half = (c[1] - c[0]) / 2 if c.size > 1 else 0.5
        omega = (c[0] - half, c[-1] + (c[-1] - c[-2]) / 2 if c.size > 1 else c[0] + 0.5)
    return np.concatenate([[omega[0]], mid, [omega[1]]])


def discretize(dist: TargetDistribution, bins, omega: tuple[float, float] | None = None) -> DiscreteLaw:
    """Bin masses from cdf differences between adjacent edges, renormalized."""
    c = np.asarray(bins, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise DistributionError("discretize needs a non-empty 1-d bin array")
    if np.any(np.diff(c) <= 0):
        raise DistributionError("bins must be strictly increasing")
    edges = bin_edges(c, omega)
    cdfs = np.array([dist.cdf(e) for e in edges])
    mass = np.clip(np.diff(cdfs), 0.0, None)
    total = mass.sum()
    if total <= 0:
        raise DistributionError("distribution puts no mass on the bin range")
    return DiscreteLaw(c, mass / total)
