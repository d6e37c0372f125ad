"""Finite-difference validation of every differentiable path: task loss,
denoising loss, and their unit-weighted sum, through the shared encoder,
the task head and the denoiser, at tiny widths in double precision."""

import torch

from wfdiff.diffusion import ddpm_loss_given, make_schedule
from wfdiff.heads import task_loss
from wfdiff.model import ModelDims, TrainConfig, build_model
from wfdiff.training import window_batch

REL_TOL = 1e-4


def tiny_setup(seed=0):
    cfg = TrainConfig(
        task="anticipation",
        horizon=1.0,
        feature_dim=4,
        spatial_width=4,
        denoiser_widths=(4,),
        timestep_dim=4,
        diffusion_steps=5,
        lam=4,
        clip_len=5,
        seed=seed,
    )
    dims = ModelDims(obs_dim=3, channels=2)
    model = build_model(cfg, dims)
    gen = torch.Generator().manual_seed(seed + 100)
    T = cfg.clip_len
    obs = torch.randn(T, dims.obs_dim, dtype=torch.float64, generator=gen)
    target = torch.rand(T, dims.channels, dtype=torch.float64, generator=gen)
    presence = torch.randint(0, 3, (T, dims.channels), generator=gen)
    window_src = torch.rand(T, dims.channels, dtype=torch.float64, generator=gen) * 2 - 1
    anchors = torch.arange(T)
    windows = window_batch(window_src, anchors, cfg.lam)
    k = torch.randint(1, cfg.diffusion_steps + 1, (T,), generator=gen)
    eps = torch.randn(windows.shape, dtype=torch.float64, generator=gen)
    sched = make_schedule(cfg.schedule, cfg.diffusion_steps)
    data = dict(obs=obs, target=target, presence=presence, windows=windows, k=k, eps=eps)
    return cfg, model, sched, data


def loss_task(model, data):
    features, _ = model.encoder.encode_clip(data["obs"])
    outputs = model.head(features)
    return task_loss(outputs, (data["target"], data["presence"]), model.head.cfg)


def loss_ddpm(model, sched, data):
    features, _ = model.encoder.encode_clip(data["obs"])
    return ddpm_loss_given(
        model.denoiser, data["windows"], features, data["k"], data["eps"], sched
    )


def fd_relative_error(loss_fn, params, h=1e-6):
    """Norm-relative gap between autograd and central finite differences."""
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    flat_a, flat_f = [], []
    with torch.no_grad():
        for p, g in zip(params, analytic):
            ga = torch.zeros_like(p) if g is None else g
            gf = torch.zeros_like(p)
            pv = p.view(-1)
            gv = gf.view(-1)
            for i in range(pv.numel()):
                orig = float(pv[i])
                pv[i] = orig + h
                with torch.enable_grad():
                    up = float(loss_fn().detach())
                pv[i] = orig - h
                with torch.enable_grad():
                    down = float(loss_fn().detach())
                pv[i] = orig
                gv[i] = (up - down) / (2.0 * h)
            flat_a.append(ga.reshape(-1))
            flat_f.append(gf.reshape(-1))
    a = torch.cat(flat_a)
    f = torch.cat(flat_f)
    return float(torch.norm(a - f)) / max(float(torch.norm(a)), float(torch.norm(f)), 1e-12)


def test_task_loss_gradients_match_finite_differences():
    cfg, model, sched, data = tiny_setup(seed=0)
    params = list(model.encoder.parameters()) + list(model.head.parameters())
    rel = fd_relative_error(lambda: loss_task(model, data), params)
    assert rel < REL_TOL, f"task-loss gradient mismatch: rel err {rel:.3e}"


def test_ddpm_loss_gradients_match_finite_differences():
    cfg, model, sched, data = tiny_setup(seed=1)
    params = list(model.encoder.parameters()) + list(model.denoiser.parameters())
    rel = fd_relative_error(lambda: loss_ddpm(model, sched, data), params)
    assert rel < REL_TOL, f"ddpm-loss gradient mismatch: rel err {rel:.3e}"


def test_total_loss_gradients_match_finite_differences():
    cfg, model, sched, data = tiny_setup(seed=2)
    params = list(model.parameters())
    total = lambda: loss_task(model, data) + loss_ddpm(model, sched, data)
    rel = fd_relative_error(total, params)
    assert rel < REL_TOL, f"total-loss gradient mismatch: rel err {rel:.3e}"


def test_ddpm_loss_gradient_wrt_condition_matches_finite_differences():
    cfg, model, sched, data = tiny_setup(seed=3)
    with torch.no_grad():
        base, _ = model.encoder.encode_clip(data["obs"])
    cond = base.clone().requires_grad_(True)

    def loss_fn():
        return ddpm_loss_given(
            model.denoiser, data["windows"], cond, data["k"], data["eps"], sched
        )

    rel = fd_relative_error(loss_fn, [cond])
    assert rel < REL_TOL, f"condition gradient mismatch: rel err {rel:.3e}"


def test_encoder_gradient_is_sum_of_per_loss_gradients():
    # linearity of the two-term objective in its loss terms, to 1e-8
    cfg, model, sched, data = tiny_setup(seed=4)
    params = list(model.encoder.parameters())
    g_task = torch.autograd.grad(loss_task(model, data), params, allow_unused=True)
    g_ddpm = torch.autograd.grad(loss_ddpm(model, sched, data), params, allow_unused=True)
    g_total = torch.autograd.grad(
        loss_task(model, data) + loss_ddpm(model, sched, data), params
    )
    for gt, g1, g2 in zip(g_total, g_task, g_ddpm):
        combined = (0 if g1 is None else g1) + (0 if g2 is None else g2)
        assert float((gt - combined).abs().max()) < 1e-8
