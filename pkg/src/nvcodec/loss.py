"""Rate-distortion training objective and its logged decomposition.

Total = lambda1 * mean(1 - MS-SSIM over all reconstructions)
      + lambda2 * mean(L1 of each warped-refined prediction + weighted total
        variation of its flow)
      + intra rate + mean of inter rates.

Rates are taken as given (the trainer normalizes bits per pixel before the
call); distortion means run over however many frames the caller supplies, so
shorter unrolls at sequence tails stay well defined.
"""

from __future__ import annotations

import numpy as np

from . import metrics as M
from . import tensor as T
from .errors import DataError
from .tensor import Tensor


def total_variation(flow: Tensor) -> Tensor:
    """Mean absolute spatial difference over both flow components."""
    dx = T.sub(T.narrow(flow, 3, 1, flow.shape[3] - 1),
               T.narrow(flow, 3, 0, flow.shape[3] - 1))
    dy = T.sub(T.narrow(flow, 2, 1, flow.shape[2] - 1),
               T.narrow(flow, 2, 0, flow.shape[2] - 1))
    return T.add(T.tmean(T.absolute(dx)), T.tmean(T.absolute(dy)))


def _mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return T.mul(total, Tensor(1.0 / len(terms), dtype=total.data.dtype))


def rd_loss(originals: list[Tensor], recons: list[Tensor],
            warped: list[Tensor], intra_rate: Tensor,
            inter_rates: list[Tensor], flows: list[Tensor] | None,
            lambda1: float, lambda2: float, tv_weight: float = 0.1
            ) -> tuple[Tensor, dict[str, float]]:
    """Scalar objective plus a float breakdown whose parts sum to the total.

    ``originals`` aligns with ``recons`` (intra frame first); ``warped`` and
    ``flows`` align with ``originals[1:]``, as do ``inter_rates``.
    """
    if len(originals) != len(recons):
        raise DataError(
            f"{len(recons)} reconstructions for {len(originals)} frames"
        )
    if len(warped) != len(originals) - 1:
        raise DataError(
            f"{len(warped)} predictions for {len(originals) - 1} inter frames"
        )
    if flows is not None and len(flows) != len(warped):
        raise DataError(f"{len(flows)} flows for {len(warped)} predictions")
    if len(inter_rates) != len(warped):
        raise DataError(
            f"{len(inter_rates)} inter rates for {len(warped)} inter frames"
        )

    d1 = _mean([T.sub(Tensor(1.0), M.ms_ssim_tensor(r, x))
                for r, x in zip(recons, originals)])
    term1 = T.mul(d1, Tensor(float(lambda1)))

    if warped:
        d2_parts = []
        for idx, (w, x) in enumerate(zip(warped, originals[1:])):
            part = T.tmean(T.absolute(T.sub(w, x)))
            if flows is not None:
                part = T.add(part, T.mul(total_variation(flows[idx]),
                                         Tensor(float(tv_weight))))
            d2_parts.append(part)
        term2 = T.mul(_mean(d2_parts), Tensor(float(lambda2)))
        rate_inter = _mean(inter_rates)
    else:
        term2 = Tensor(0.0)
        rate_inter = Tensor(0.0)

    total = T.add(T.add(term1, term2), T.add(intra_rate, rate_inter))
    breakdown = {
        "distortion": float(term1.data),
        "warp": float(term2.data),
        "rate_intra": float(intra_rate.data),
        "rate_inter": float(rate_inter.data),
        "total": float(total.data),
    }
    return total, breakdown
