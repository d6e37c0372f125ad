"""Diffusion branch: noise schedule, forward corruption, conditional denoiser,
training objective, and ancestral / deterministic samplers.

Windows are tensors of shape (batch, channels, lam): the lam-frame history
of signal-encoded labels. The denoiser is a 1-D U-Net over the lam axis,
conditioned on the diffusion step and on the anchor frame's feature vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

CONDITIONING_MODES = ("film", "add", "concat")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule tables. ``alpha_bars`` has length K+1 with alpha_bar_0 = 1."""

    kind: str
    num_steps: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    def sigmas(self, mode: str = "beta") -> torch.Tensor:
        """Per-step reverse noise scale, indexed by k-1.

        ``beta``: sigma_k^2 = beta_k. ``posterior``: sigma_k^2 =
        beta_k * (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k).
        """
        if mode == "beta":
            return torch.sqrt(self.betas)
        if mode == "posterior":
            var = self.betas * (1.0 - self.alpha_bars[:-1]) / (1.0 - self.alpha_bars[1:])
            return torch.sqrt(var)
        raise ValueError(f"unknown sigma mode {mode!r}")


def make_schedule(kind: str, num_steps: int) -> DiffusionSchedule:
    """Build a cosine or linear variance schedule with K steps."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if kind == "cosine":
        s = 0.008
        steps = torch.arange(num_steps + 1, dtype=torch.float64)
        f = torch.cos((steps / num_steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bars = f / f[0]
        betas = 1.0 - alpha_bars[1:] / alpha_bars[:-1]
        betas = torch.clamp(betas, max=0.999)
    elif kind == "linear":
        scale = 1000.0 / num_steps
        betas = torch.linspace(1e-4 * scale, 0.02 * scale, num_steps, dtype=torch.float64)
        betas = torch.clamp(betas, max=0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(alphas, dim=0)])
    if not (betas.min() > 0 and betas.max() < 1):
        raise ValueError("schedule produced betas outside (0, 1)")
    if not (alpha_bars[1:] < alpha_bars[:-1]).all():
        raise ValueError("alpha_bar must be strictly decreasing")
    return DiffusionSchedule(
        kind=kind, num_steps=num_steps, betas=betas, alphas=alphas, alpha_bars=alpha_bars
    )


def _gather_alpha_bar(sched: DiffusionSchedule, k: torch.Tensor, ndim: int) -> torch.Tensor:
    ab = sched.alpha_bars[k]
    return ab.reshape(ab.shape + (1,) * (ndim - ab.ndim))


def _check_steps(k: torch.Tensor, low: int, high: int) -> torch.Tensor:
    k = torch.as_tensor(k, dtype=torch.long)
    if k.numel() and (k.min() < low or k.max() > high):
        raise ValueError(f"diffusion step outside [{low}, {high}]")
    return k


def q_sample(
    y0: torch.Tensor, k: torch.Tensor | int, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Forward corruption: sqrt(ab_k) * y0 + sqrt(1 - ab_k) * eps."""
    k = _check_steps(k, 0, sched.num_steps)
    ab = _gather_alpha_bar(sched, k, y0.ndim)
    return torch.sqrt(ab) * y0 + torch.sqrt(1.0 - ab) * eps


def predict_x0(
    yk: torch.Tensor, k: torch.Tensor | int, eps_hat: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Closed-form clean-window estimate from a noisy window and predicted noise."""
    k = _check_steps(k, 1, sched.num_steps)
    ab = _gather_alpha_bar(sched, k, yk.ndim)
    return (yk - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int
    lam: int
    cond_dim: int
    widths: tuple[int, ...] = (32, 64)
    timestep_dim: int = 128
    conditioning: str = "film"

    def __post_init__(self):
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        factor = 2 ** (len(self.widths) - 1)
        if self.lam % factor != 0:
            raise ValueError(f"lam={self.lam} not divisible by downsampling factor {factor}")


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0)
            * torch.arange(half, dtype=torch.float64, device=k.device)
            / (half - 1)
        )
        args = k.to(torch.float64)[:, None] * freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        if self.dim % 2 == 1:
            emb = nn.functional.pad(emb, (0, 1))
        return emb


def _num_groups(channels: int, preferred: int = 8) -> int:
    for g in (preferred, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


class Conv1dBlock(nn.Module):
    """Conv -> GroupNorm -> SiLU. Group statistics never mix across the batch."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(_num_groups(out_ch), out_ch)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.conv(x)))


class ConditionalResBlock(nn.Module):
    """Residual block whose hidden activation is modulated by the condition.

    film: h <- gamma(cond) * h + delta(cond); add: h <- h + proj(cond).
    With ``cond=None`` the block runs in its unconditioned form.
    """

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, mode: str):
        super().__init__()
        self.mode = mode
        self.block1 = Conv1dBlock(in_ch, out_ch)
        self.block2 = Conv1dBlock(out_ch, out_ch)
        if mode == "film":
            self.cond_proj = nn.Linear(cond_dim, 2 * out_ch)
        elif mode == "add":
            self.cond_proj = nn.Linear(cond_dim, out_ch)
        else:
            self.cond_proj = None
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None) -> torch.Tensor:
        h = self.block1(x)
        if cond is not None and self.cond_proj is not None:
            proj = self.cond_proj(cond)[:, :, None]
            if self.mode == "film":
                gamma, delta = proj.chunk(2, dim=1)
                h = gamma * h + delta
            else:
                h = h + proj
        h = self.block2(h)
        return h + self.skip(x)


class ConditionalDenoiser(nn.Module):
    """1-D U-Net over the window axis, predicting the injected noise.

    The diffusion step is embedded sinusoidally and projected; the feature
    condition is appended to it. In film/add mode the joint condition
    modulates every residual block; in concat mode it is broadcast over the
    window axis and concatenated to the input channels.

    ``call_count`` tracks forward invocations so evaluation paths can prove
    they never touch the stochastic branch.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.call_count = 0
        ted = cfg.timestep_dim
        self.step_encoder = nn.Sequential(
            SinusoidalEmbedding(ted), nn.Linear(ted, 4 * ted), nn.SiLU(), nn.Linear(4 * ted, ted)
        )
        joint_dim = ted + cfg.cond_dim
        block_cond = joint_dim if cfg.conditioning in ("film", "add") else 0
        block_mode = cfg.conditioning if cfg.conditioning in ("film", "add") else "none"
        in_ch = cfg.channels + (joint_dim if cfg.conditioning == "concat" else 0)

        widths = cfg.widths
        self.downs = nn.ModuleList()
        prev = in_ch
        for i, w in enumerate(widths):
            self.downs.append(
                nn.ModuleList(
                    [
                        ConditionalResBlock(prev, w, block_cond, block_mode),
                        ConditionalResBlock(w, w, block_cond, block_mode),
                        nn.Conv1d(w, w, 3, stride=2, padding=1)
                        if i < len(widths) - 1
                        else nn.Identity(),
                    ]
                )
            )
            prev = w
        self.mid1 = ConditionalResBlock(prev, prev, block_cond, block_mode)
        self.mid2 = ConditionalResBlock(prev, prev, block_cond, block_mode)
        self.ups = nn.ModuleList()
        for i, w in enumerate(reversed(widths[:-1])):
            self.ups.append(
                nn.ModuleList(
                    [
                        nn.ConvTranspose1d(prev, prev, 4, stride=2, padding=1),
                        ConditionalResBlock(prev + w, w, block_cond, block_mode),
                        ConditionalResBlock(w, w, block_cond, block_mode),
                    ]
                )
            )
            prev = w
        self.final = nn.Sequential(Conv1dBlock(prev, prev), nn.Conv1d(prev, cfg.channels, 1))

    def forward(self, yk: torch.Tensor, k: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        self.call_count += 1
        if yk.shape[-1] != self.cfg.lam or yk.shape[-2] != self.cfg.channels:
            raise ValueError(f"window shape {tuple(yk.shape)} does not match config")
        k = torch.as_tensor(k, dtype=torch.long, device=yk.device)
        if k.ndim == 0:
            k = k.expand(yk.shape[0])
        joint = torch.cat([self.step_encoder(k), cond], dim=-1)
        if self.cfg.conditioning == "concat":
            x = torch.cat([yk, joint[:, :, None].expand(-1, -1, yk.shape[-1])], dim=1)
            block_cond = None
        else:
            x = yk
            block_cond = joint

        skips = []
        for i, (res1, res2, down) in enumerate(self.downs):
            x = res1(x, block_cond)
            x = res2(x, block_cond)
            if i < len(self.downs) - 1:
                skips.append(x)
                x = down(x)
        x = self.mid1(x, block_cond)
        x = self.mid2(x, block_cond)
        for up, res1, res2 in self.ups:
            x = up(x)
            x = torch.cat([x, skips.pop()], dim=1)
            x = res1(x, block_cond)
            x = res2(x, block_cond)
        return self.final(x)


def eps_predict(
    denoiser: ConditionalDenoiser,
    yk: torch.Tensor,
    k: torch.Tensor | int,
    cond: torch.Tensor,
) -> torch.Tensor:
    """Predicted noise for a batch of noisy windows."""
    return denoiser(yk, k, cond)


def ddpm_loss_given(
    denoiser: ConditionalDenoiser,
    y0: torch.Tensor,
    cond: torch.Tensor,
    k: torch.Tensor,
    eps: torch.Tensor,
    sched: DiffusionSchedule,
) -> torch.Tensor:
    """Denoising objective at fixed (k, eps): mean squared noise-prediction error."""
    yk = q_sample(y0, k, eps, sched)
    eps_hat = denoiser(yk, k, cond)
    return torch.mean((eps - eps_hat) ** 2)


def ddpm_loss(
    denoiser: ConditionalDenoiser,
    y0: torch.Tensor,
    cond: torch.Tensor,
    sched: DiffusionSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """Draw one (k, eps) pair per window and return the denoising objective."""
    k = torch.randint(1, sched.num_steps + 1, (y0.shape[0],), generator=rng)
    eps = torch.randn(y0.shape, dtype=y0.dtype, generator=rng)
    return ddpm_loss_given(denoiser, y0, cond, k, eps, sched)


def ancestral_sample(
    denoiser,
    cond: torch.Tensor,
    sched: DiffusionSchedule,
    shape: tuple[int, ...],
    rng: torch.Generator,
    sigma_mode: str = "beta",
) -> torch.Tensor:
    """Full K-step reverse chain from Gaussian noise; noise suppressed at k=1."""
    sigmas = sched.sigmas(sigma_mode)
    y = torch.randn(shape, dtype=torch.float64, generator=rng)
    for k in range(sched.num_steps, 0, -1):
        eps_hat = denoiser(y, torch.full((shape[0],), k, dtype=torch.long), cond)
        alpha = sched.alphas[k - 1]
        ab = sched.alpha_bars[k]
        y = (y - (1.0 - alpha) / torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(alpha)
        if k > 1:
            y = y + sigmas[k - 1] * torch.randn(shape, dtype=torch.float64, generator=rng)
    return y


def ddim_timesteps(num_steps: int, steps: int) -> list[int]:
    """Evenly spaced sub-sequence 0 = tau_0 < ... < tau_steps = K."""
    if not 1 <= steps <= num_steps:
        raise ValueError(f"steps must be in [1, {num_steps}]")
    taus = [int(round(x)) for x in torch.linspace(0, num_steps, steps + 1).tolist()]
    return taus


def ddim_sample(
    denoiser,
    cond: torch.Tensor,
    sched: DiffusionSchedule,
    shape: tuple[int, ...],
    rng: torch.Generator,
    steps: int = 16,
    eta: float = 0.0,
    y_init: torch.Tensor | None = None,
) -> torch.Tensor:
    """Accelerated sampler over a timestep sub-sequence; deterministic at eta=0."""
    taus = ddim_timesteps(sched.num_steps, steps)
    y = torch.randn(shape, dtype=torch.float64, generator=rng) if y_init is None else y_init.clone()
    for i in range(len(taus) - 1, 0, -1):
        tau, tau_prev = taus[i], taus[i - 1]
        eps_hat = denoiser(y, torch.full((shape[0],), tau, dtype=torch.long), cond)
        x0 = predict_x0(y, tau, eps_hat, sched)
        if tau_prev == 0:
            y = x0
            continue
        ab_t = sched.alpha_bars[tau]
        ab_prev = sched.alpha_bars[tau_prev]
        sigma = eta * torch.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * torch.sqrt(1.0 - ab_t / ab_prev)
        y = torch.sqrt(ab_prev) * x0 + torch.sqrt(1.0 - ab_prev - sigma**2) * eps_hat
        if eta > 0:
            y = y + sigma * torch.randn(shape, dtype=torch.float64, generator=rng)
    return y
