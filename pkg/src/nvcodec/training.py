"""Three-stage training: intra transform, motion stack, then the joint unroll.

Stage 1 fits the intra codec on single frames, stage 2 fits flow estimation
plus flow compression on uncompressed frame pairs, and stage 3 fine-tunes
everything end to end on short clips where each predicted frame references
the previous reconstruction. One model object serves every unroll step, so
the weights applied at step t are the same storage applied at step t+1.

The residual codec is initialized between the pretrain stages and the joint
stage: weights are warm-started from the trained intra codec, then adapted
to frame-difference content on uncompressed pairs. Both halves exist to
keep the joint stage out of a local optimum where coding whole frames
through the residual path is cheaper than coding actual differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import entropy as E
from . import loss as L
from . import nn
from . import tensor as T
from .codec import CodecModels
from .config import TrainConfig
from .errors import DataError
from .intra import intra_train_forward
from .metrics import ms_ssim_tensor
from .residual import residual_train_forward
from .tensor import Tensor


@dataclass
class TrainLog:
    intra: list[float] = field(default_factory=list)
    flow: list[float] = field(default_factory=list)
    warmup: list[float] = field(default_factory=list)
    joint: list[float] = field(default_factory=list)
    joint_breakdown: list[dict[str, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        for stage in (self.joint, self.warmup, self.flow, self.intra):
            if stage:
                return stage[-1]
        raise DataError("no training steps recorded")


def moving_average(values: list[float], window: int = 10) -> list[float]:
    """Trailing mean; entry i averages the window ending at i (shorter at
    the start)."""
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    out = []
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out.append(float(np.mean(values[lo : i + 1])))
    return out


def _check_corpus(corpus: list[np.ndarray], config: TrainConfig) -> list[np.ndarray]:
    if not corpus:
        raise DataError("corpus is empty")
    checked = []
    for i, seq in enumerate(corpus):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 4 or seq.shape[1] != 3:
            raise DataError(f"sequence {i} must be (T,3,H,W), got {seq.shape}")
        if seq.shape[0] < config.unroll:
            raise DataError(
                f"sequence {i} has {seq.shape[0]} frames, need >= {config.unroll}"
            )
        if seq.shape[2] < config.crop or seq.shape[3] < config.crop:
            raise DataError(
                f"sequence {i} is {seq.shape[2]}x{seq.shape[3]}, "
                f"smaller than the {config.crop} crop"
            )
        checked.append(seq)
    return checked


class Trainer:
    """Owns the models, the optimizers, and all sampling randomness."""

    def __init__(self, config: TrainConfig, corpus: list[np.ndarray]):
        self.config = config
        self.corpus = _check_corpus(corpus, config)
        self.models = CodecModels(seed=config.seed)
        self.sample_rng = np.random.default_rng(config.seed)
        self.noise_rng = np.random.default_rng(config.seed + 1)
        self.log = TrainLog()

    # ------------------------------------------------------------------
    # sampling

    def _sample_clip(self, length: int) -> np.ndarray:
        crop = self.config.crop
        seq = self.corpus[int(self.sample_rng.integers(len(self.corpus)))]
        t0 = int(self.sample_rng.integers(seq.shape[0] - length + 1))
        y0 = int(self.sample_rng.integers(seq.shape[2] - crop + 1))
        x0 = int(self.sample_rng.integers(seq.shape[3] - crop + 1))
        return seq[t0 : t0 + length, :, y0 : y0 + crop, x0 : x0 + crop]

    def _epoch_of(self, step: int) -> int:
        # one notional epoch is one clip sample per corpus sequence
        return step // max(1, len(self.corpus))

    def _bpp(self, rate_bits: Tensor) -> Tensor:
        pixels = float(self.config.crop * self.config.crop)
        return T.mul(rate_bits, Tensor(1.0 / pixels, dtype=rate_bits.data.dtype))

    # ------------------------------------------------------------------
    # stage losses

    def _intra_loss(self) -> Tensor:
        clip = self._sample_clip(1)
        x = Tensor(clip[0][None])
        recon, rate = intra_train_forward(self.models.intra, x, self.noise_rng)
        similarity = ms_ssim_tensor(recon, x)
        distortion = T.mul(T.sub(Tensor(1.0), similarity),
                           Tensor(float(self.config.lambda1)))
        return T.add(distortion, self._bpp(rate))

    def _residual_pair_loss(self) -> Tensor:
        # pair whose prediction is the intra recon of the previous frame,
        # detached: adapts the residual codec to sparse difference content
        # plus upstream coding error before the joint stage. Without this,
        # a codec still tuned for full frames rewards degrading the
        # prediction path, and one tuned on clean differences undercorrects
        # the error that accumulates along a GOP
        clip = self._sample_clip(2)
        prev = Tensor(clip[0][None])
        cur = Tensor(clip[1][None])
        recon_prev, _ = intra_train_forward(self.models.intra, prev,
                                            self.noise_rng)
        prediction = Tensor(recon_prev.data.copy(),
                            dtype=recon_prev.data.dtype)
        state = self.models.residual.initial_state(self.config.crop,
                                                   self.config.crop)
        recon, rate, _ = residual_train_forward(
            self.models.residual, cur, prediction, state, self.noise_rng)
        similarity = ms_ssim_tensor(recon, cur)
        distortion = T.mul(T.sub(Tensor(1.0), similarity),
                           Tensor(float(self.config.lambda1)))
        return T.add(distortion, self._bpp(rate))

    def _flow_loss(self) -> Tensor:
        clip = self._sample_clip(2)
        ref = Tensor(clip[0][None])
        cur = Tensor(clip[1][None])
        flow_model = self.models.inter.flow
        flow = flow_model.estimator(ref, cur)
        latents = flow_model.autoencoder.encode(flow)
        # straight-through-rounded symbols, matching the inter training path
        symbols = T.add(latents, Tensor(
            E.clamp_symbols(T.round_half_away(latents.data)) - latents.data,
            dtype=latents.data.dtype,
        ))
        rate = E.estimate_rate(symbols, flow_model.prior.params_like(symbols))
        warped = T.bilinear_warp(ref, flow_model.autoencoder.decode(symbols))
        warp_err = T.add(
            T.tmean(T.absolute(T.sub(warped, cur))),
            T.mul(L.total_variation(flow), Tensor(float(self.config.tv_weight))),
        )
        distortion = T.mul(warp_err, Tensor(float(self.config.lambda2)))
        return T.add(distortion, self._bpp(rate))

    def _joint_loss(self) -> tuple[Tensor, dict[str, float]]:
        config = self.config
        clip = self._sample_clip(config.unroll)
        originals = [Tensor(frame[None]) for frame in clip]
        x0 = originals[0]
        recon0, intra_rate = intra_train_forward(self.models.intra, x0, self.noise_rng)
        temporal_state = self.models.inter.temporal.initial_state(
            config.crop, config.crop
        )
        residual_state = self.models.residual.initial_state(config.crop, config.crop)

        recons = [recon0]
        warped: list[Tensor] = []
        flows: list[Tensor] = []
        inter_rates: list[Tensor] = []
        ref = recon0
        for cur in originals[1:]:
            prediction, refined, flow, flow_rate, temporal_state = \
                self.models.inter.predict_train(ref, cur, temporal_state)
            recon, res_rate, residual_state = residual_train_forward(
                self.models.residual, cur, prediction, residual_state,
                self.noise_rng,
            )
            recons.append(recon)
            warped.append(refined)
            flows.append(flow)
            inter_rates.append(self._bpp(T.add(flow_rate, res_rate)))
            ref = recon
        return L.rd_loss(originals, recons, warped, self._bpp(intra_rate),
                         inter_rates, flows, config.lambda1, config.lambda2,
                         config.tv_weight)

    # ------------------------------------------------------------------
    # stage drivers

    def _run_stage(self, steps: int, optimizer: nn.Adam, forward,
                   base_lr: float = 0.0) -> list[float]:
        losses = []
        for step in range(steps):
            optimizer.lr = self.config.lr_at_epoch(self._epoch_of(step), base_lr)
            total = Tensor(0.0)
            breakdown = None
            with T.Tape():
                for _ in range(self.config.batch):
                    out = forward()
                    if isinstance(out, tuple):
                        out, breakdown = out
                    total = T.add(total, out)
                if self.config.batch > 1:
                    total = T.mul(total, Tensor(1.0 / self.config.batch))
                optimizer.zero_grad()
                T.backward(total)
            # an unroll of 2 advances the recurrent state once and never
            # reads it back, leaving those weights off the tape entirely
            for p in optimizer.params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            optimizer.step()
            losses.append(float(total.data))
            if breakdown is not None:
                self.log.joint_breakdown.append(breakdown)
        return losses

    def run_intra_stage(self, steps: int | None = None) -> list[float]:
        steps = self.config.steps_intra if steps is None else steps
        opt = nn.Adam(self.models.intra.parameters(), lr=self.config.lr)
        losses = self._run_stage(steps, opt, self._intra_loss)
        self.log.intra.extend(losses)
        return losses

    def run_flow_stage(self, steps: int | None = None) -> list[float]:
        steps = self.config.steps_flow if steps is None else steps
        opt = nn.Adam(self.models.inter.flow.parameters(), lr=self.config.lr)
        losses = self._run_stage(steps, opt, self._flow_loss)
        self.log.flow.extend(losses)
        return losses

    def warm_start_residual(self) -> int:
        """Copies intra weights into same-shaped residual weights.

        The two codecs share an architecture skeleton, and a residual codec
        started from random weights prices everything at hundreds of bits
        per pixel, which destabilizes the first joint steps. Returns the
        number of parameters copied.
        """
        source = dict(self.models.intra.named_parameters())
        copied = 0
        for name, param in self.models.residual.named_parameters():
            match = source.get(name)
            if match is not None and match.data.shape == param.data.shape:
                param.data = match.data.copy()
                copied += 1
        return copied

    def run_residual_warmup(self, steps: int | None = None) -> list[float]:
        steps = self.config.steps_warmup if steps is None else steps
        opt = nn.Adam(self.models.residual.parameters(), lr=self.config.lr)
        losses = self._run_stage(steps, opt, self._residual_pair_loss)
        self.log.warmup.extend(losses)
        return losses

    def run_joint_stage(self, steps: int | None = None) -> list[float]:
        steps = self.config.steps_joint if steps is None else steps
        opt = nn.Adam(self.models.parameters(), lr=self.config.lr)
        losses = self._run_stage(steps, opt, self._joint_loss,
                                 base_lr=self.config.lr_joint)
        self.log.joint.extend(losses)
        return losses

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.models)


def train(config: TrainConfig, corpus: list[np.ndarray]
          ) -> tuple[CodecModels, TrainLog]:
    """Runs all three stages with the configured step counts.

    Between the pretrain stages and the joint stage the residual codec is
    initialized: weights warm-started from the trained intra codec, then
    optionally adapted to difference content for ``steps_warmup`` steps.
    """
    trainer = Trainer(config, corpus)
    trainer.run_intra_stage()
    trainer.run_flow_stage()
    trainer.warm_start_residual()
    if config.steps_warmup > 0:
        trainer.run_residual_warmup()
    trainer.run_joint_stage()
    return trainer.models, trainer.log
