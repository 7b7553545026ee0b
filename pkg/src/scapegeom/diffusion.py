"""DDPM forward/reverse process with warp-consistent score guidance.

Timesteps are 1-based: t runs over 1..T and schedule tables index
betas[t-1]. alpha_bar(0) = 1 is the clean-data extension. The forward
marginal is x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps. The
reverse (ancestral) step uses the score parameterization

    mu      = (x_t + beta_t * score) / sqrt(alpha_t)
    var_t   = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
    x_{t-1} = mu + sqrt(var_t) * noise        (t > 1)
    x_0     = mu                              (t = 1, no noise)

Score and noise prediction are interchangeable via
score = -noise / sqrt(1 - abar_t).

Guidance attaches in data space: the one-step clean estimate
x0_hat = (x_t + (1 - abar_t) * score) / sqrt(abar_t) is compared
against the rendered reference through the trimmed masked loss, the
loss gradient is mapped back through d x0_hat / d x_t = 1/sqrt(abar_t),
and the adjusted score is score - w * grad. Positive w therefore
decreases the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .consistency import (
    ConsistencyConfig,
    warp_loss_gradient,
    warp_loss_gradient_batch,
)
from .core import (
    DimensionMismatch,
    OutOfRangeValue,
    RenderBundle,
    ScapegeomError,
    ValidationError,
)
from .depth_codec import DepthCodecConfig, rgbd_to_channels

__all__ = [
    "TimestepOutOfRange",
    "NoiseSchedule",
    "Denoiser",
    "GuidanceConfig",
    "WarpTarget",
    "forward_sample",
    "reverse_step",
    "score_to_noise",
    "noise_to_score",
    "guided_score",
    "sample",
    "sample_many",
    "analytic_gaussian_denoiser",
    "AnalyticGaussianDenoiser",
    "ClassifierFreeDenoiser",
]


class TimestepOutOfRange(ScapegeomError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_1..beta_T with cached alpha products."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if b.size == 0:
            raise OutOfRangeValue("schedule needs at least one step")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise OutOfRangeValue("every beta must lie strictly in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        abar = np.concatenate(([1.0], np.cumprod(alphas)))
        alphas.setflags(write=False)
        abar.setflags(write=False)
        object.__setattr__(self, "_alphas", alphas)
        object.__setattr__(self, "_alpha_bars", abar)

    @classmethod
    def linear(cls, beta_start: float = 1e-4, beta_end: float = 0.02, steps: int = 1000) -> "NoiseSchedule":
        """Evenly spaced betas; the demo default is 1e-4 to 0.02 over 1000 steps."""
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, minimum: int = 1) -> int:
        t = int(t)
        if not minimum <= t <= self.num_steps:
            raise TimestepOutOfRange(
                f"t={t} outside [{minimum}, {self.num_steps}]"
            )
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self._alphas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal retention; alpha_bar(0) == 1."""
        return float(self._alpha_bars[self._check(t, minimum=0)])


class Denoiser(Protocol):
    """Score estimator. thread_safe declares whether score_fn may be
    invoked concurrently; single-threaded denoisers set it False."""

    thread_safe: bool

    def score_fn(self, x_t: np.ndarray, t: int, condition) -> np.ndarray: ...


def forward_sample(x0, t: int, noise, schedule: NoiseSchedule) -> np.ndarray:
    """Noise x0 to timestep t in closed form. t=0 returns x0 unchanged."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = schedule._check(t, minimum=0)
    if t == 0:
        return x0.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise DimensionMismatch(f"noise {noise.shape} does not match x0 {x0.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def reverse_step(x_t, t: int, score, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; the t=1 step is deterministic."""
    x_t = np.asarray(x_t, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if score.shape != x_t.shape:
        raise DimensionMismatch(f"score {score.shape} does not match x_t {x_t.shape}")
    t = schedule._check(t)
    mu = (x_t + schedule.beta(t) * score) / np.sqrt(schedule.alpha(t))
    if t == 1:
        return mu
    if noise is None:
        raise ValidationError("noise is required for steps with t > 1")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x_t.shape:
        raise DimensionMismatch(f"noise {noise.shape} does not match x_t {x_t.shape}")
    var = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)) * schedule.beta(t)
    return mu + np.sqrt(var) * noise


def score_to_noise(score, t: int, schedule: NoiseSchedule) -> np.ndarray:
    return -np.sqrt(1.0 - schedule.alpha_bar(schedule._check(t))) * np.asarray(score, dtype=np.float64)


def noise_to_score(noise, t: int, schedule: NoiseSchedule) -> np.ndarray:
    return -np.asarray(noise, dtype=np.float64) / np.sqrt(1.0 - schedule.alpha_bar(schedule._check(t)))


@dataclass(frozen=True)
class WarpTarget:
    """Rendering reference in loss space: channel image plus pixel mask.

    reference is either mask-shaped (single channel) or mask shape plus
    a trailing channel axis, matching what the consistency loss accepts.
    """

    reference: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=np.float64)
        mask = np.asarray(self.mask) != 0
        if ref.shape != mask.shape and ref.shape[:-1] != mask.shape:
            raise DimensionMismatch(f"reference {ref.shape} does not match mask {mask.shape}")
        ref.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_bundle(cls, bundle: RenderBundle, codec: DepthCodecConfig = DepthCodecConfig()) -> "WarpTarget":
        return cls(rgbd_to_channels(bundle.image, codec), bundle.mask.mask)

    @property
    def sample_shape(self) -> tuple:
        return self.reference.shape


@dataclass(frozen=True)
class GuidanceConfig:
    """w scales the loss-gradient correction; w = 0 disables guidance."""

    w: float = 1.0
    consistency: ConsistencyConfig = ConsistencyConfig()
    codec: DepthCodecConfig = DepthCodecConfig()

    def __post_init__(self):
        if self.w < 0.0:
            raise OutOfRangeValue(f"guidance scale must be >= 0, got {self.w}")


def _as_target(bundle, codec: DepthCodecConfig) -> WarpTarget:
    if isinstance(bundle, WarpTarget):
        return bundle
    if isinstance(bundle, RenderBundle):
        return WarpTarget.from_bundle(bundle, codec)
    raise ValidationError(f"expected RenderBundle or WarpTarget, got {type(bundle).__name__}")


def guided_score(
    score,
    x_t,
    bundle,
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
    t: int,
) -> np.ndarray:
    """Adjust a score estimate toward warp consistency (see module docstring)."""
    if cfg.w == 0.0:
        return score
    target = _as_target(bundle, cfg.codec)
    x_t = np.asarray(x_t, dtype=np.float64)
    s = np.asarray(score, dtype=np.float64)
    t = schedule._check(t)
    abar = schedule.alpha_bar(t)
    x0_hat = (x_t + (1.0 - abar) * s) / np.sqrt(abar)
    grad = warp_loss_gradient(x0_hat, target.reference, target.mask, cfg.consistency, cfg.codec)
    return s - cfg.w * grad / np.sqrt(abar)


def _start_shape(shape, condition, codec: DepthCodecConfig):
    if shape is not None:
        return tuple(int(n) for n in shape)
    if isinstance(condition, WarpTarget):
        return condition.sample_shape
    if isinstance(condition, RenderBundle):
        h, w = condition.image.height, condition.image.width
        return (h, w, 4)
    raise ValidationError("sample() needs an explicit shape when no condition is given")


def sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    condition=None,
    guidance: GuidanceConfig | None = None,
    seed: int = 0,
    shape: tuple | None = None,
) -> np.ndarray:
    """Draw one sample by ancestral denoising from seeded unit noise.

    All randomness flows through a single generator built from seed, so
    identical inputs give bit-identical trajectories. Per-step noise is
    drawn only for steps with t > 1.
    """
    shape = _start_shape(shape, condition, guidance.codec if guidance else DepthCodecConfig())
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    use_guidance = guidance is not None and guidance.w > 0.0
    if use_guidance and condition is None:
        raise ValidationError("guidance with w > 0 needs a condition to match")
    for t in range(schedule.num_steps, 0, -1):
        s = np.asarray(denoiser.score_fn(x, t, condition), dtype=np.float64)
        if s.shape != x.shape:
            raise DimensionMismatch(f"denoiser returned {s.shape} for input {x.shape}")
        if use_guidance:
            s = guided_score(s, x, condition, guidance, schedule, t)
        noise = rng.standard_normal(shape) if t > 1 else None
        x = reverse_step(x, t, s, schedule, noise)
    return x


def sample_many(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    count: int,
    shape: tuple,
    condition=None,
    guidance: GuidanceConfig | None = None,
    seed: int = 0,
) -> np.ndarray:
    """count independent trajectories advanced in lockstep, shape (count, *shape).

    Step noise is drawn independently per trajectory, so the rows are
    iid draws from the sampler. Trajectories never share state beyond
    the vectorized arithmetic; any parallelism splits across rows, not
    inside one trajectory. Guided batches need a single-channel
    WarpTarget (per-row gradients each normalize by that row's own
    survivor count).
    """
    shape = tuple(int(n) for n in shape)
    batch_shape = (int(count),) + shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(batch_shape)
    use_guidance = guidance is not None and guidance.w > 0.0
    if use_guidance:
        target = _as_target(condition, guidance.codec)
        if target.reference.shape != target.mask.shape:
            raise ValidationError("batched guidance supports single-channel targets only")
        if shape != target.mask.shape:
            raise DimensionMismatch(f"rows {shape} do not match mask {target.mask.shape}")
    for t in range(schedule.num_steps, 0, -1):
        s = np.asarray(denoiser.score_fn(x, t, condition), dtype=np.float64)
        if s.shape != x.shape:
            raise DimensionMismatch(f"denoiser returned {s.shape} for input {x.shape}")
        if use_guidance:
            abar = schedule.alpha_bar(t)
            x0_hat = (x + (1.0 - abar) * s) / np.sqrt(abar)
            grad = warp_loss_gradient_batch(x0_hat, target.reference, target.mask, guidance.consistency)
            s = s - guidance.w * grad / np.sqrt(abar)
        noise = rng.standard_normal(batch_shape) if t > 1 else None
        x = reverse_step(x, t, s, schedule, noise)
    return x


@dataclass(frozen=True)
class AnalyticGaussianDenoiser:
    """Exact score of N(mu, sigma^2 I) data diffused by the given schedule:
    score(x, t) = -(x - sqrt(abar_t) * mu) / (abar_t * sigma^2 + 1 - abar_t).
    """

    mu: float
    sigma: float
    schedule: NoiseSchedule
    thread_safe: bool = True

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise OutOfRangeValue(f"sigma must be > 0, got {self.sigma}")

    def score_fn(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        abar = self.schedule.alpha_bar(t)
        x_t = np.asarray(x_t, dtype=np.float64)
        return -(x_t - np.sqrt(abar) * self.mu) / (abar * self.sigma**2 + 1.0 - abar)


def analytic_gaussian_denoiser(mu: float, sigma: float, schedule: NoiseSchedule) -> AnalyticGaussianDenoiser:
    """Oracle denoiser for Gaussian data; needs the schedule for abar lookups."""
    return AnalyticGaussianDenoiser(float(mu), float(sigma), schedule)


@dataclass(frozen=True)
class ClassifierFreeDenoiser:
    """Blend of conditional and unconditional scores:
    score = uncond + strength * (cond - uncond). strength 7.5 by default.
    """

    conditional: Denoiser
    unconditional: Denoiser
    strength: float = 7.5

    @property
    def thread_safe(self) -> bool:
        return bool(getattr(self.conditional, "thread_safe", False) and getattr(self.unconditional, "thread_safe", False))

    def score_fn(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        s_c = np.asarray(self.conditional.score_fn(x_t, t, condition), dtype=np.float64)
        s_u = np.asarray(self.unconditional.score_fn(x_t, t, None), dtype=np.float64)
        return s_u + self.strength * (s_c - s_u)
