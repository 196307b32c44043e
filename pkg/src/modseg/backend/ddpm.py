"""DDPM noise schedule and posterior-step coefficients (timesteps indexed 1..T)."""
from __future__ import annotations

import numpy as np


def alphas_cumprod(max_timestep: int = 1000, beta_start: float = 0.00085,
                   beta_end: float = 0.012) -> np.ndarray:
    """Cumulative alpha products for the scaled-linear beta schedule.

    Index 0 is the clean image (value 1), index t for t in [1, T].
    """
    betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, max_timestep) ** 2
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def posterior_coefficients(abar_t: float, abar_prev: float) -> tuple[float, float, float]:
    """Coefficients of the DDPM posterior q(x_prev | x_t, x_0) for a strided step.

    Returns ``(coef_x0, coef_xt, sigma)`` such that the posterior mean is
    ``coef_x0 * x0 + coef_xt * x_t`` and its standard deviation is ``sigma``.
    """
    beta = 1.0 - abar_t / abar_prev
    coef_x0 = np.sqrt(abar_prev) * beta / (1.0 - abar_t)
    coef_xt = np.sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar_t)
    sigma = np.sqrt((1.0 - abar_prev) / (1.0 - abar_t) * beta)
    return float(coef_x0), float(coef_xt), float(sigma)
