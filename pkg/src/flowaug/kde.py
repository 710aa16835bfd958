"""One-dimensional Gaussian kernel density estimation.

The estimate is ``p(x) = 1/(n h) * sum_i K((x - x_i) / h)`` with ``K`` the
standard normal density. Bandwidths default to Silverman's Gaussian rule
``h = (4 sigma^5 / (3 n)) ** (1/5)`` with the Bessel-corrected sample deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSamples, InsufficientSamples, InvalidBandwidth, InvalidRange

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# pdf/cdf evaluation works on (chunk x n) blocks
_CHUNK_ELEMENTS = 4_000_000


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class KdeModel:
    samples: np.ndarray
    bandwidth: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if samples.size < 1:
            raise InsufficientSamples("a KDE needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("KDE samples must be finite")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise InvalidBandwidth(f"bandwidth must be positive, got {self.bandwidth}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def dimension(self) -> int:
        return 1

    def pdf(self, x):
        return kde_pdf(self, x)

    def cdf(self, x):
        return kde_cdf(self, x)

    def sample(self, count: int, rng) -> np.ndarray:
        return kde_sample(self, count, rng)


@dataclass(frozen=True)
class ConstantModel:
    """Stand-in for a feature whose observed values are all identical."""

    value: float

    def sample(self, count: int, rng) -> np.ndarray:
        return np.full(count, self.value, dtype=np.float64)


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise InsufficientSamples(f"Silverman's rule needs n >= 2, got {n}")
    sigma = float(np.std(x, ddof=1))
    if not sigma > 0:
        raise DegenerateSamples("all samples are identical; bandwidth undefined")
    return (4.0 * sigma**5 / (3.0 * n)) ** 0.2


def kde_fit(samples, bandwidth: float | None = None) -> KdeModel:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientSamples(f"kde_fit needs at least 2 samples, got {x.size}")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(x)
    elif not bandwidth > 0:
        raise InvalidBandwidth(f"bandwidth must be positive, got {bandwidth}")
    return KdeModel(x, float(bandwidth))


def fit_or_constant(samples, bandwidth: float | None = None) -> KdeModel | ConstantModel:
    """Fit a KDE, falling back to a constant when the values cannot support one."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise InsufficientSamples("no values to model")
    if x.size == 1 or np.all(x == x[0]):
        return ConstantModel(float(x[0]))
    return kde_fit(x, bandwidth)


def _blocks(model: KdeModel, x: np.ndarray):
    step = max(1, _CHUNK_ELEMENTS // model.n)
    for start in range(0, x.size, step):
        yield start, x[start : start + step]


def kde_pdf(model: KdeModel, x):
    """Density estimate at ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=np.float64)
    flat = xa.ravel()
    out = np.empty(flat.size)
    h = model.bandwidth
    for start, chunk in _blocks(model, flat):
        u = (chunk[:, None] - model.samples[None, :]) / h
        out[start : start + chunk.size] = np.exp(-0.5 * u * u).sum(axis=1) * (_INV_SQRT_2PI / (model.n * h))
    if xa.ndim == 0:
        return float(out[0])
    return out.reshape(xa.shape)


def kde_cdf(model: KdeModel, x):
    """Distribution function of the kernel mixture, ``mean_i Phi((x - x_i) / h)``."""
    xa = np.asarray(x, dtype=np.float64)
    flat = xa.ravel()
    out = np.empty(flat.size)
    for start, chunk in _blocks(model, flat):
        u = (chunk[:, None] - model.samples[None, :]) / model.bandwidth
        out[start : start + chunk.size] = ndtr(u).mean(axis=1)
    if xa.ndim == 0:
        return float(out[0])
    return out.reshape(xa.shape)


def kde_sample(model: KdeModel, count: int, rng_seed) -> np.ndarray:
    """Exact draws from the mixture: a random retained sample plus h * N(0, 1)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = as_rng(rng_seed)
    idx = rng.integers(0, model.n, size=count)
    z = rng.standard_normal(count)
    return model.samples[idx] + model.bandwidth * z


def round_clamp(values, lo: int, hi: int) -> np.ndarray:
    """Round half-up to the nearest integer, then clamp into ``[lo, hi]``."""
    if lo > hi:
        raise InvalidRange(f"empty range [{lo}, {hi}]")
    v = np.floor(np.asarray(values, dtype=np.float64) + 0.5)
    return np.clip(v, lo, hi).astype(np.int64)


def sample_clamped_int(model, count: int, lo: int, hi: int, rng_seed) -> np.ndarray:
    if lo > hi:
        raise InvalidRange(f"empty range [{lo}, {hi}]")
    return round_clamp(model.sample(count, as_rng(rng_seed)), lo, hi)
