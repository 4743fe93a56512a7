"""Similarity metric and loss checks.

The windowed-similarity oracle below evaluates every window position by
direct weighted moments, written before the vectorized implementation was
trusted, so the two share no arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from setgan.gan_models import build_discriminator, build_generator, gaussian_field, to_tensor
from setgan.metrics import (
    WINDOW_SIGMA,
    WINDOW_SIZE,
    adversarial_loss,
    exit_score,
    gaussian_window,
    gradient_penalty,
    gradient_penalty_term,
    reconstruction_loss,
    reconstruction_loss_term,
    ssim,
    to_luma,
)
from setgan.pyramid import PyramidError

C1 = 0.01 ** 2
C2 = 0.03 ** 2


def brute_force_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Per-window evaluation with explicitly centered moments."""
    x = ((a.astype(np.float64) + 1.0) / 2.0) @ np.array([0.299, 0.587, 0.114])
    y = ((b.astype(np.float64) + 1.0) / 2.0) @ np.array([0.299, 0.587, 0.114])
    half = (WINDOW_SIZE - 1) / 2.0
    g = np.exp(-((np.arange(WINDOW_SIZE) - half) ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    w = np.outer(g, g)
    w = w / w.sum()
    h, wd = x.shape
    values = []
    for i in range(h - WINDOW_SIZE + 1):
        for j in range(wd - WINDOW_SIZE + 1):
            px = x[i : i + WINDOW_SIZE, j : j + WINDOW_SIZE]
            py = y[i : i + WINDOW_SIZE, j : j + WINDOW_SIZE]
            mx = float((w * px).sum())
            my = float((w * py).sum())
            vx = float((w * (px - mx) ** 2).sum())
            vy = float((w * (py - my) ** 2).sum())
            cxy = float((w * (px - mx) * (py - my)).sum())
            values.append(
                ((2 * mx * my + C1) * (2 * cxy + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2))
            )
    return float(np.mean(values))


def random_grid(rng, dims=(16, 16)):
    return rng.uniform(-1.0, 1.0, (*dims, 3)).astype(np.float32)


def test_ssim_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(100)
    for _ in range(50):
        a = random_grid(rng)
        b = random_grid(rng)
        assert ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-6)


def test_ssim_identity_is_one():
    rng = np.random.default_rng(5)
    img = random_grid(rng, (20, 14))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_symmetry():
    rng = np.random.default_rng(6)
    a = random_grid(rng)
    b = random_grid(rng)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_constant_planes_closed_form():
    # luma 0 vs luma 1, all variances zero:
    # ((2*0*1 + C1) * C2) / ((0 + 1 + C1) * C2) = C1 / (1 + C1)
    black = np.full((12, 12, 3), -1.0, dtype=np.float32)
    white = np.full((12, 12, 3), 1.0, dtype=np.float32)
    assert ssim(black, white) == pytest.approx(C1 / (1.0 + C1), abs=1e-12)
    assert ssim(black, black) == pytest.approx(1.0, abs=1e-12)


def test_ssim_input_validation():
    ok = np.zeros((12, 12, 3), dtype=np.float32)
    with pytest.raises(PyramidError, match="mismatch"):
        ssim(ok, np.zeros((12, 13, 3), dtype=np.float32))
    with pytest.raises(PyramidError, match="at least"):
        ssim(np.zeros((8, 8, 3), dtype=np.float32), np.zeros((8, 8, 3), dtype=np.float32))


def test_exit_score_clamps():
    # anticorrelated structure can push raw SSIM below zero
    yy, xx = np.mgrid[0:16, 0:16]
    wave = np.sin(xx * 1.3 + yy * 0.7)
    a = np.repeat(wave[..., None], 3, -1).astype(np.float32)
    b = (-a).astype(np.float32)
    raw = ssim(a, b)
    clamped = exit_score(a, b)
    assert 0.0 <= clamped <= 1.0
    if raw < 0.0:
        assert clamped == 0.0


def test_gaussian_window_normalized_and_symmetric():
    w = gaussian_window()
    assert w.shape == (WINDOW_SIZE, WINDOW_SIZE)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, w.T)
    assert np.allclose(w, w[::-1, ::-1])


def test_to_luma_range_and_weights():
    white = np.full((4, 4, 3), 1.0, dtype=np.float32)
    assert to_luma(white) == pytest.approx(np.ones((4, 4)))
    red = np.full((4, 4, 3), -1.0, dtype=np.float32)
    red[..., 0] = 1.0
    assert to_luma(red) == pytest.approx(np.full((4, 4), 0.299))


# ---------------------------------------------------------------------------
# Adversarial losses
# ---------------------------------------------------------------------------

def test_adversarial_loss_float_identities():
    gen_loss, disc_loss = adversarial_loss(d_real=1.25, d_fake=-0.5, gp=0.8, gp_weight=0.1)
    assert gen_loss == 0.5
    assert disc_loss == -0.5 - 1.25 + 0.1 * 0.8
    # combined identity: the d_fake terms cancel
    assert gen_loss + disc_loss == pytest.approx(-1.25 + 0.1 * 0.8, abs=1e-12)


def test_adversarial_loss_keeps_graph():
    d_real = torch.tensor(0.3, requires_grad=True)
    d_fake = torch.tensor(-0.2, requires_grad=True)
    gp = torch.tensor(0.5, requires_grad=True)
    gen_loss, disc_loss = adversarial_loss(d_real, d_fake, gp, 0.1)
    assert gen_loss.requires_grad and disc_loss.requires_grad
    disc_loss.backward()
    assert d_real.grad is not None


def test_adversarial_loss_rejects_negative_weight():
    with pytest.raises(ValueError):
        adversarial_loss(0.0, 0.0, 0.0, -0.1)


class _LinearCritic(torch.nn.Module):
    """Score = <w, x>; its input gradient is w everywhere."""

    def __init__(self, weight: torch.Tensor):
        super().__init__()
        self.weight = torch.nn.Parameter(weight)

    def forward(self, x):
        return (x * self.weight).sum(dim=(1, 2, 3))


def test_gradient_penalty_linear_critic_closed_form():
    rng = np.random.default_rng(42)
    w = torch.tensor(rng.normal(0, 0.7, (1, 3, 8, 8)), dtype=torch.float32)
    critic = _LinearCritic(w)
    expected = (float(w.norm()) - 1.0) ** 2
    real = random_grid(rng, (8, 8))
    fake = random_grid(rng, (8, 8))
    for mix_seed in (0, 1, 99):
        assert gradient_penalty(critic, real, fake, mix_seed) == pytest.approx(
            expected, abs=1e-5
        )


def test_discriminator_gradient_matches_finite_differences():
    torch.manual_seed(0)
    disc = build_discriminator(0).double()
    x = torch.tensor(
        np.random.default_rng(13).uniform(-0.9, 0.9, (1, 3, 8, 8)), dtype=torch.float64
    )

    xg = x.clone().requires_grad_(True)
    disc(xg)[0].backward()
    auto = xg.grad.detach().numpy().ravel()

    h = 1e-5
    fd = np.zeros_like(auto)
    flat = x.clone().reshape(-1)
    for k in range(flat.numel()):
        for sign in (1.0, -1.0):
            bumped = flat.clone()
            bumped[k] += sign * h
            with torch.no_grad():
                val = float(disc(bumped.reshape(x.shape))[0])
            fd[k] += sign * val
        fd[k] /= 2.0 * h

    rel = np.linalg.norm(fd - auto) / np.linalg.norm(auto)
    assert rel < 1e-4


def test_gradient_penalty_deterministic_in_mix_seed():
    torch.manual_seed(0)
    disc = build_discriminator(0)
    rng = np.random.default_rng(3)
    real = random_grid(rng, (12, 12))
    fake = random_grid(rng, (12, 12))
    assert gradient_penalty(disc, real, fake, 7) == gradient_penalty(disc, real, fake, 7)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), mix_seed=st.integers(0, 2**31 - 1))
def test_gradient_penalty_nonnegative(seed, mix_seed):
    disc = build_discriminator(0, np.random.default_rng(0))
    rng = np.random.default_rng(seed)
    real = random_grid(rng, (12, 12))
    fake = random_grid(rng, (12, 12))
    assert gradient_penalty(disc, real, fake, mix_seed) >= 0.0


def test_gradient_penalty_shape_mismatch_raises():
    disc = build_discriminator(0)
    with pytest.raises(PyramidError):
        gradient_penalty(
            disc,
            np.zeros((12, 12, 3), dtype=np.float32),
            np.zeros((12, 13, 3), dtype=np.float32),
            0,
        )


def test_gradient_penalty_term_builds_second_order_graph():
    disc = build_discriminator(0)
    real = to_tensor(np.zeros((12, 12, 3), dtype=np.float32))
    fake = to_tensor(np.full((12, 12, 3), 0.25, dtype=np.float32))
    term = gradient_penalty_term(disc, real, fake, eps=0.5)
    assert term.requires_grad
    term.backward()
    grads = [p.grad for p in disc.parameters() if p.grad is not None]
    assert grads, "penalty must reach discriminator parameters"


# ---------------------------------------------------------------------------
# Reconstruction anchor
# ---------------------------------------------------------------------------

class _PassThrough(torch.nn.Module):
    def forward(self, noise, coarse=None):
        return noise


def test_reconstruction_term_is_pixel_mse():
    noise = torch.zeros(1, 3, 4, 4)
    target = torch.full((1, 3, 4, 4), 0.5)
    loss = reconstruction_loss_term(_PassThrough(), noise, None, target)
    assert float(loss) == pytest.approx(0.25, abs=1e-7)

    rng = np.random.default_rng(8)
    a = rng.uniform(-1, 1, (1, 3, 4, 4)).astype(np.float32)
    b = rng.uniform(-1, 1, (1, 3, 4, 4)).astype(np.float32)
    loss = reconstruction_loss_term(_PassThrough(), torch.tensor(a), None, torch.tensor(b))
    assert float(loss) == pytest.approx(float(np.mean((a - b) ** 2)), abs=1e-7)


def test_reconstruction_loss_model_level_matches_manual():
    from setgan.gan_models import ScaleModel, generator_forward

    rng = np.random.default_rng(21)
    gen = build_generator(0, np.random.default_rng(0))
    model = ScaleModel(
        scale_index=0,
        generator=gen,
        discriminator=build_discriminator(0, np.random.default_rng(0)),
        noise_amplitude=1.0,
        fixed_rec_seed=77,
    )
    target = rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
    got = reconstruction_loss(model, None, target)
    noise = gaussian_field((16, 16), 77, 1.0)
    out = generator_forward(model, noise, None)
    manual = float(np.mean((out.astype(np.float64) - target) ** 2))
    assert got == pytest.approx(manual, rel=1e-6)


def test_reconstruction_loss_validates_coarse_argument():
    gen = build_generator(0, np.random.default_rng(0))
    model_kwargs = dict(
        generator=gen,
        discriminator=build_discriminator(0, np.random.default_rng(0)),
        noise_amplitude=1.0,
        fixed_rec_seed=1,
    )
    from setgan.gan_models import ScaleModel

    coarsest = ScaleModel(scale_index=0, **model_kwargs)
    target = np.zeros((16, 16, 3), dtype=np.float32)
    with pytest.raises(PyramidError):
        reconstruction_loss(coarsest, target, target)  # coarse forbidden at scale 0
