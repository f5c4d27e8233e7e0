"""The latent-shaping objective shared by the linear and deep models.

Both models minimize::

    recon_pos + beta * (gamma - recon_neg) ** 2

where ``recon_pos`` and ``recon_neg`` are batch means of squared reconstruction
errors. With ``hinge=True`` the target term becomes ``max(0, gamma - recon_neg) ** 2``,
so overshooting ``gamma`` is not penalized.
"""

from __future__ import annotations


def shaping_loss(
    recon_pos: float, recon_neg: float, beta: float, gamma: float, hinge: bool = False
) -> tuple[float, float, float]:
    """Return ``(total, d total / d recon_pos, d total / d recon_neg)``."""
    gap = gamma - recon_neg
    if hinge:
        gap = max(gap, 0.0)
    total = recon_pos + beta * gap * gap
    return total, 1.0, -2.0 * beta * gap
