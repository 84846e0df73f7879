"""Quantization, Gaussian conditional probability modeling, and quantized CDF tables.

The probability of an integer symbol under a Gaussian with mean mu and scale
sigma is the mass of the unit-width bin centered on it:

    p(k) = Phi((k + 1/2 - mu) / sigma) - Phi((k - 1/2 - mu) / sigma)

Training rates integrate the same expression over noisy (non-integer) latents.
CDF tables quantize these probabilities to 16-bit precision with a per-symbol
floor of one unit so every in-range symbol stays decodable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import tensor as T
from .tensor import Tensor

SIGMA_MIN = 0.11
CDF_BITS = 16
CDF_TOTAL = 1 << CDF_BITS
SYMBOL_MIN = -256
SYMBOL_MAX = 256
_PMF_FLOOR = 1e-9
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class QuantizerMode(enum.Enum):
    TRAIN_NOISE = "train-noise"
    INFER_ROUND = "infer-round"


@dataclass
class GaussianParams:
    """Per-element mean/scale of the conditional symbol distribution."""

    mu: Tensor
    sigma: Tensor


def quantize(latents: Tensor, mode: QuantizerMode, rng: np.random.Generator | None = None) -> Tensor:
    """Additive uniform noise during training, round-half-away at inference."""
    if mode is QuantizerMode.TRAIN_NOISE:
        if rng is None:
            raise ValueError("TrainNoise quantization needs a seeded generator")
        return T.quantize_noise(latents, rng)
    return Tensor(T.round_half_away(latents.data))


def gaussian_pmf(symbols: Tensor, params: GaussianParams) -> Tensor:
    """Bin mass of each symbol under its Gaussian; sigma is clamped to SIGMA_MIN.

    Tail bins are evaluated through the complementary error function on the
    side where both bin edges share a sign, so masses stay positive far into
    the tails instead of cancelling to zero.
    """
    sigma = T.maximum(params.sigma, Tensor(SIGMA_MIN))
    half = Tensor(0.5)
    centered = T.sub(symbols, params.mu)
    lo = T.mul(T.div(T.sub(centered, half), sigma), Tensor(_INV_SQRT2))
    hi = T.mul(T.div(T.add(centered, half), sigma), Tensor(_INV_SQRT2))
    upper_tail = T.sub(T.erfc(lo), T.erfc(hi))  # exact when lo >= 0
    lower_tail = T.sub(T.erfc(T.neg(hi)), T.erfc(T.neg(lo)))  # exact when hi <= 0
    central = T.sub(T.erf(hi), T.erf(lo))
    picked = T.where(lo.data >= 0.0, upper_tail,
                     T.where(hi.data <= 0.0, lower_tail, central))
    return T.mul(picked, half)


def estimate_rate(latents: Tensor, params: GaussianParams) -> Tensor:
    """Total bits: -sum(log2 pmf), floored so the estimate stays finite."""
    if latents.size == 0:
        return Tensor(0.0)
    pmf = gaussian_pmf(latents, params)
    pmf = T.maximum(pmf, Tensor(_PMF_FLOOR))
    return T.neg(T.div(T.tsum(T.log(pmf)), Tensor(np.log(2.0))))


def _pmf_rows(mu: np.ndarray, sigma: np.ndarray, smin: int, smax: int) -> np.ndarray:
    """Float64 bin masses over [smin, smax] with tails folded into the edge bins."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64).reshape(-1, 1), SIGMA_MIN)
    edges = np.arange(smin, smax + 1, dtype=np.float64) + 0.5
    cdf_at_edges = 0.5 * (1.0 + special.erf((edges - mu) / (sigma * np.sqrt(2.0))))
    lower = np.concatenate([np.zeros((mu.shape[0], 1)), cdf_at_edges[:, :-1]], axis=1)
    upper = cdf_at_edges.copy()
    upper[:, -1] = 1.0  # fold the upper tail; lower tail folded by the zero column
    return upper - lower


def _quantize_rows(pmf: np.ndarray) -> np.ndarray:
    """Round to 1/2^16 units with a floor of 1, then settle the rounding
    surplus/deficit as evenly as possible across the largest bins so no
    single bin absorbs the whole correction."""
    freq = np.maximum(np.round(pmf * CDF_TOTAL), 1.0).astype(np.int64)
    for row in freq:
        diff = CDF_TOTAL - int(row.sum())
        if diff == 0:
            continue
        order = np.argsort(-row, kind="stable")
        if diff > 0:
            base, rem = divmod(diff, row.size)
            row += base
            if rem:
                row[order[:rem]] += 1
        else:
            need = -diff
            caps = row[order] - 1  # how much each bin can give up, floor of 1
            if int(caps.sum()) < need:
                raise ValueError("symbol range too wide for 16-bit CDF precision")
            lo, hi = 1, int(caps.max())
            while lo < hi:  # smallest level whose capped removal covers the deficit
                mid = (lo + hi) // 2
                if int(np.minimum(caps, mid).sum()) >= need:
                    hi = mid
                else:
                    lo = mid + 1
            removal = np.minimum(caps, lo)
            excess = int(removal.sum()) - need
            if excess:
                at_level = np.flatnonzero(removal == lo)
                removal[at_level[-excess:]] -= 1
            row[order] -= removal
    return freq


@dataclass
class CdfTable:
    """Quantized cumulative tables: rows[i] is the CDF for position i.

    Each row has symbol_count + 1 entries, starts at 0, and ends at 2^16.
    A single-row table is shared across all positions.
    """

    rows: np.ndarray  # (n, symbol_count + 1) int64
    offset: int  # integer symbol value of the first bin

    @property
    def symbol_count(self) -> int:
        return self.rows.shape[1] - 1

    def row(self, i: int) -> np.ndarray:
        return self.rows[0] if self.rows.shape[0] == 1 else self.rows[i]

    def quantized_pmf(self) -> np.ndarray:
        return np.diff(self.rows, axis=1) / CDF_TOTAL

    def validate(self) -> None:
        if self.rows.ndim != 2:
            raise ValueError("cdf rows must be 2-D")
        if np.any(self.rows[:, 0] != 0) or np.any(self.rows[:, -1] != CDF_TOTAL):
            raise ValueError("cdf rows must span exactly [0, 2^16]")
        if np.any(np.diff(self.rows, axis=1) < 1):
            raise ValueError("every symbol needs probability >= 1 unit")


def build_cdf_table(params: GaussianParams, smin: int = SYMBOL_MIN, smax: int = SYMBOL_MAX) -> CdfTable:
    """Quantized per-element CDFs over the integer range [smin, smax]."""
    if smin >= smax:
        raise ValueError(f"degenerate symbol range [{smin}, {smax}]")
    mu = params.mu.data if isinstance(params.mu, Tensor) else np.asarray(params.mu)
    sigma = params.sigma.data if isinstance(params.sigma, Tensor) else np.asarray(params.sigma)
    if mu.shape != sigma.shape:
        raise T.ShapeMismatchError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    pmf = _pmf_rows(mu, sigma, smin, smax)
    freq = _quantize_rows(pmf)
    rows = np.zeros((freq.shape[0], freq.shape[1] + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=rows[:, 1:])
    table = CdfTable(rows=rows, offset=smin)
    return table


def clamp_symbols(values: np.ndarray, smin: int = SYMBOL_MIN, smax: int = SYMBOL_MAX) -> np.ndarray:
    """Integer symbols clipped to the coder's fixed range."""
    return np.clip(values, smin, smax).astype(np.int64)
