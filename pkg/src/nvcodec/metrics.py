"""MS-SSIM (with dB transform), BD-Rate, and RD report rendering.

One MS-SSIM implementation serves both evaluation and the training loss: it
is written on the differentiable tensor ops, and the float-returning wrapper
simply runs it tape-free. Filtering uses an 11x11 Gaussian (sigma 1.5) applied
separably with reflect padding, so frames keep their size at every scale and
the canonical 5-scale variant works down to 160x160 (smaller frames drop the
finest-grained scales; weights are renormalized).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import tensor as T
from .tensor import Tensor

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW = 11
_K1 = 0.01
_K2 = 0.03
_MIN_EXTENT = 6  # reflect padding by 5 needs at least 6 samples
DB_CEILING = 100.0


def _gauss_kernel(size: int = _WINDOW, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


_KERNEL = _gauss_kernel()


def _gauss_filter(x: Tensor) -> Tensor:
    """Separable Gaussian blur, reflect-padded, same output size."""
    pad = _WINDOW // 2
    h, w = x.shape[2], x.shape[3]
    xp = T.pad2d(x, pad, mode="reflect")
    acc = None
    for i, k in enumerate(_KERNEL):
        term = T.mul(T.narrow(xp, 3, i, w), Tensor(k))
        acc = term if acc is None else T.add(acc, term)
    out = None
    for i, k in enumerate(_KERNEL):
        term = T.mul(T.narrow(acc, 2, i, h), Tensor(k))
        out = term if out is None else T.add(out, term)
    return out


def _ssim_pair(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Mean SSIM and mean contrast-structure term over all positions."""
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mu_a = _gauss_filter(a)
    mu_b = _gauss_filter(b)
    mu_aa = T.mul(mu_a, mu_a)
    mu_bb = T.mul(mu_b, mu_b)
    mu_ab = T.mul(mu_a, mu_b)
    var_a = T.sub(_gauss_filter(T.mul(a, a)), mu_aa)
    var_b = T.sub(_gauss_filter(T.mul(b, b)), mu_bb)
    cov = T.sub(_gauss_filter(T.mul(a, b)), mu_ab)
    two = Tensor(2.0)
    lum = T.div(T.add(T.mul(two, mu_ab), Tensor(c1)),
                T.add(T.add(mu_aa, mu_bb), Tensor(c1)))
    cs = T.div(T.add(T.mul(two, cov), Tensor(c2)),
               T.add(T.add(var_a, var_b), Tensor(c2)))
    return T.tmean(T.mul(lum, cs)), T.tmean(cs)


def ms_ssim_levels(height: int, width: int, max_levels: int = 5) -> int:
    """How many dyadic scales the frame supports (5 from 160x160 up)."""
    levels = 0
    extent = min(height, width)
    while levels < max_levels and extent >= _MIN_EXTENT:
        levels += 1
        extent //= 2
    if levels == 0:
        raise T.ShapeMismatchError(
            f"frame {height}x{width} too small for an {_WINDOW}x{_WINDOW} window"
        )
    return levels


def ms_ssim_tensor(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable multi-scale similarity of (N,C,H,W) tensors in [0,1]."""
    if a.shape != b.shape:
        raise T.ShapeMismatchError(f"frame extents differ: {a.shape} vs {b.shape}")
    levels = ms_ssim_levels(a.shape[2], a.shape[3])
    weights = np.asarray(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    floor = Tensor(1e-6)
    log_acc = None
    for level in range(levels):
        ssim_mean, cs_mean = _ssim_pair(a, b)
        value = ssim_mean if level == levels - 1 else cs_mean
        term = T.mul(T.log(T.maximum(value, floor)), Tensor(weights[level]))
        log_acc = term if log_acc is None else T.add(log_acc, term)
        if level < levels - 1:
            even_h = (a.shape[2] // 2) * 2
            even_w = (a.shape[3] // 2) * 2
            a = T.avg_pool2d(T.narrow(T.narrow(a, 2, 0, even_h), 3, 0, even_w), 2)
            b = T.avg_pool2d(T.narrow(T.narrow(b, 2, 0, even_h), 3, 0, even_w), 2)
    return T.exp(log_acc)


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """MS-SSIM of two frames shaped (C,H,W) or (H,W), values in [0,1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise T.ShapeMismatchError(f"frame extents differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise T.ShapeMismatchError(f"expected (C,H,W) or (H,W), got {a.shape}")
    with T.using_dtype(np.float64):
        # channels ride the batch axis; the mean over them is the frame score
        ta = Tensor(a[:, None, :, :])
        tb = Tensor(b[:, None, :, :])
        return float(ms_ssim_tensor(ta, tb).item())


def to_db(d: float, ceiling: float = DB_CEILING) -> float:
    """Similarity to decibels: -10*log10(1-d); d=1 clamps to the ceiling."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"similarity {d} outside [0, 1]")
    if 1.0 - d <= 10.0 ** (-ceiling / 10.0):
        return ceiling
    return -10.0 * math.log10(1.0 - d)


@dataclass
class RDPoint:
    rate: float  # bits per pixel
    ms_ssim: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not 0.0 <= self.ms_ssim <= 1.0:
            raise ValueError(f"ms_ssim {self.ms_ssim} outside [0, 1]")

    @property
    def db(self) -> float:
        return to_db(self.ms_ssim)


@dataclass
class RDCurve:
    points: list[RDPoint] = field(default_factory=list)

    def __post_init__(self):
        rates = [p.rate for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("curve points must have strictly increasing rates")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def dbs(self) -> np.ndarray:
        return np.array([p.db for p in self.points])


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average log-rate difference over the shared distortion range, in percent.

    Negative values mean the test curve needs fewer bits than the anchor at
    equal quality. Interpolation is monotone piecewise-cubic on log10(rate)
    as a function of MS-SSIM dB.
    """
    for name, curve in (("anchor", anchor), ("test", test)):
        if len(curve.points) < 4:
            raise ValueError(f"{name} curve needs >= 4 points, got {len(curve.points)}")
        if np.any(np.diff(curve.dbs) <= 0):
            raise ValueError(f"{name} curve distortion must increase with rate")
    lo = max(anchor.dbs.min(), test.dbs.min())
    hi = min(anchor.dbs.max(), test.dbs.max())
    if hi <= lo:
        raise ValueError("curves share no distortion overlap")
    f_anchor = PchipInterpolator(anchor.dbs, np.log10(anchor.rates))
    f_test = PchipInterpolator(test.dbs, np.log10(test.rates))
    int_anchor = f_anchor.antiderivative()
    int_test = f_test.antiderivative()
    avg_diff = ((int_test(hi) - int_test(lo)) - (int_anchor(hi) - int_anchor(lo))) / (hi - lo)
    return float((10.0 ** avg_diff - 1.0) * 100.0)


def _svg_plot(sequence: str, curves: dict[str, RDCurve]) -> str:
    """Minimal deterministic RD plot: rate (bpp) vs quality (dB)."""
    width, height = 640, 480
    margin = 60
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    all_rates = np.concatenate([c.rates for c in curves.values()])
    all_dbs = np.concatenate([c.dbs for c in curves.values()])
    r_lo, r_hi = float(all_rates.min()), float(all_rates.max())
    d_lo, d_hi = float(all_dbs.min()), float(all_dbs.max())
    r_span = (r_hi - r_lo) or 1.0
    d_span = (d_hi - d_lo) or 1.0

    def sx(rate):
        return margin + (rate - r_lo) / r_span * (width - 2 * margin)

    def sy(db):
        return height - margin - (db - d_lo) / d_span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{sequence}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 16}" text-anchor="middle" '
        f'font-size="12">rate (bpp)</text>',
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.1f})">MS-SSIM (dB)</text>',
    ]
    for idx, (label, curve) in enumerate(sorted(curves.items())):
        color = palette[idx % len(palette)]
        pts = " ".join(f"{sx(p.rate):.2f},{sy(p.db):.2f}" for p in curve.points)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for p in curve.points:
            parts.append(
                f'<circle cx="{sx(p.rate):.2f}" cy="{sy(p.db):.2f}" r="3" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{width - margin - 4}" y="{margin + 16 * idx + 12}" '
            f'text-anchor="end" font-size="12" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def rd_table_report(per_sequence: dict[str, dict[str, RDCurve]], out_dir,
                    anchor_label: str | None = None) -> dict[str, str]:
    """Write one CSV (points, per-sequence BD-Rate rows, average row) plus one
    SVG per sequence. Returns {filename: path} of everything written.

    CSV schema: sequence,label,rate_bpp,ms_ssim,ms_ssim_db,bd_rate_pct.
    Point rows leave bd_rate_pct empty; BD-Rate rows leave the point columns
    empty. BD-Rate rows appear when a sequence carries the anchor label plus
    at least one other curve.
    """
    if not per_sequence:
        raise ValueError("report needs at least one sequence")
    os.makedirs(out_dir, exist_ok=True)
    written: dict[str, str] = {}
    lines = ["sequence,label,rate_bpp,ms_ssim,ms_ssim_db,bd_rate_pct"]
    bd_values: list[float] = []
    for sequence in sorted(per_sequence):
        curves = per_sequence[sequence]
        if not curves:
            raise ValueError(f"sequence {sequence!r} has no curves")
        for label in sorted(curves):
            for p in curves[label].points:
                lines.append(
                    f"{sequence},{label},{p.rate:.6f},{p.ms_ssim:.6f},{p.db:.4f},"
                )
    anchor = anchor_label
    if anchor is None:
        labels = {label for curves in per_sequence.values() for label in curves}
        anchor = sorted(labels)[0] if len(labels) > 1 else None
    if anchor is not None:
        for sequence in sorted(per_sequence):
            curves = per_sequence[sequence]
            if anchor not in curves:
                continue
            for label in sorted(curves):
                if label == anchor or len(curves[label].points) < 4:
                    continue
                value = bd_rate(curves[anchor], curves[label])
                bd_values.append(value)
                lines.append(f"{sequence},{label},,,,{value:.4f}")
        if bd_values:
            lines.append(f"average,,,,,{np.mean(bd_values):.4f}")
    csv_path = os.path.join(out_dir, "rd_report.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    written["rd_report.csv"] = csv_path
    for sequence in sorted(per_sequence):
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in sequence)
        svg_path = os.path.join(out_dir, f"rd_{safe}.svg")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(_svg_plot(sequence, per_sequence[sequence]))
        written[f"rd_{safe}.svg"] = svg_path
    return written
