"""Structural similarity and the training losses.

SSIM is computed on the luma channel with an 11x11 Gaussian window
(sigma 1.5), stability constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2 for
dynamic range L = 1.0 after mapping inputs from [-1, 1] to [0, 1]. Only
fully valid windows contribute to the mean; internal math is float64.

The loss functions implement the Wasserstein critic objective with a
gradient penalty plus a pixel-MSE reconstruction anchor.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.signal import convolve2d

from .gan_models import ScaleModel, gaussian_field, to_tensor
from .pyramid import PyramidError, as_image_grid, grid_dims

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2

# BT.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (sums to exactly 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def to_luma(image: np.ndarray) -> np.ndarray:
    """Map an image grid to a [0, 1] luma plane (float64)."""
    image = as_image_grid(image)
    unit = (image.astype(np.float64) + 1.0) / 2.0
    return unit @ _LUMA


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM between two image grids of identical dims.

    Raises PyramidError on a shape mismatch or when either side is smaller
    than the 11x11 window.
    """
    a = as_image_grid(a)
    b = as_image_grid(b)
    if a.shape != b.shape:
        raise PyramidError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < WINDOW_SIZE or a.shape[1] < WINDOW_SIZE:
        raise PyramidError(
            f"ssim needs at least {WINDOW_SIZE}x{WINDOW_SIZE} pixels, got {a.shape[:2]}"
        )

    x = to_luma(a)
    y = to_luma(b)
    window = gaussian_window()

    def filt(plane: np.ndarray) -> np.ndarray:
        return convolve2d(plane, window, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = filt(x * x) - mu_xx
    sigma_yy = filt(y * y) - mu_yy
    sigma_xy = filt(x * y) - mu_xy

    num = (2.0 * mu_xy + _C1) * (2.0 * sigma_xy + _C2)
    den = (mu_xx + mu_yy + _C1) * (sigma_xx + sigma_yy + _C2)
    return float(np.mean(num / den))


def exit_score(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM clamped to [0, 1] for threshold comparisons."""
    return min(1.0, max(0.0, ssim(a, b)))


# ---------------------------------------------------------------------------
# Adversarial losses
# ---------------------------------------------------------------------------

def adversarial_loss(d_real, d_fake, gp, gp_weight: float):
    """Wasserstein losses: returns (gen_loss, disc_loss).

    Works on floats or on tensors inside a training graph.
    """
    if gp_weight < 0:
        raise ValueError("gp_weight must be >= 0")
    disc_loss = d_fake - d_real + gp_weight * gp
    gen_loss = -d_fake
    return gen_loss, disc_loss


def gradient_penalty_term(
    disc: torch.nn.Module,
    real: torch.Tensor,
    fake: torch.Tensor,
    eps: float,
) -> torch.Tensor:
    """Differentiable penalty (||grad D(x_hat)||_2 - 1)^2 at the mixed point."""
    mixed = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(True)
    score = disc(mixed).sum()
    (grad,) = torch.autograd.grad(score, mixed, create_graph=True)
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def gradient_penalty(
    disc: torch.nn.Module, real: np.ndarray, fake: np.ndarray, mix_seed: int
) -> float:
    """Penalty on array inputs with the mixing epsilon drawn from mix_seed."""
    real = as_image_grid(real)
    fake = as_image_grid(fake)
    if real.shape != fake.shape:
        raise PyramidError(f"penalty shape mismatch: {real.shape} vs {fake.shape}")
    eps = float(np.random.Generator(np.random.PCG64(mix_seed)).uniform())
    term = gradient_penalty_term(disc, to_tensor(real), to_tensor(fake), eps)
    return float(term.detach())


# ---------------------------------------------------------------------------
# Reconstruction anchor
# ---------------------------------------------------------------------------

def reconstruction_loss_term(
    generator: torch.nn.Module,
    noise: torch.Tensor,
    coarse: torch.Tensor | None,
    target: torch.Tensor,
) -> torch.Tensor:
    return torch.nn.functional.mse_loss(generator(noise, coarse), target)


def reconstruction_loss(
    model: ScaleModel, coarse_real: np.ndarray | None, target: np.ndarray
) -> float:
    """Pixel MSE between the anchored generator output and its target.

    The coarsest scale uses the model's fixed reconstruction noise; finer
    scales use a zero noise field over the real upscaled coarse image.
    """
    target = as_image_grid(target)
    dims = grid_dims(target)
    if model.generator.coarsest:
        if coarse_real is not None:
            raise PyramidError("coarsest scale takes no coarse input")
        noise = gaussian_field(dims, model.fixed_rec_seed, model.noise_amplitude)
        coarse_t = None
    else:
        if coarse_real is None:
            raise PyramidError("non-coarsest scale requires the upscaled coarse image")
        coarse_real = as_image_grid(coarse_real)
        if grid_dims(coarse_real) != dims:
            raise PyramidError(
                f"coarse dims {grid_dims(coarse_real)} do not match target {dims}"
            )
        noise = np.zeros((dims[0], dims[1], 3), dtype=np.float32)
        coarse_t = to_tensor(coarse_real)
    with torch.no_grad():
        loss = reconstruction_loss_term(
            model.generator, to_tensor(noise), coarse_t, to_tensor(target)
        )
    return float(loss)
