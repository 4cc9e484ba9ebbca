"""SCAD penalty and the exact group shrinkage (proximal) rule used on Gamma blocks."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["ScadPenalty", "group_prox", "prox_radius"]


@dataclass(frozen=True)
class ScadPenalty:
    """Smoothly clipped absolute deviation penalty with tuning lam and knee a.

    Linear with slope lam near zero, quadratic blend on (lam, a*lam], and flat
    at lam^2 (a + 1) / 2 beyond a*lam, so large coefficients are not shrunk.
    """

    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.a <= 2:
            raise ValueError(f"a must be > 2, got {self.a}")

    def rho(self, t):
        """Penalty value at t >= 0 (vectorized)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("rho expects nonnegative arguments (callers pass norms)")
        lam, a = self.lam, self.a
        linear = lam * t
        middle = (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1))
        flat = lam * lam * (a + 1) / 2
        out = np.where(t <= lam, linear, np.where(t <= a * lam, middle, flat))
        return out if out.ndim else float(out)

    def rho_prime(self, t):
        """Derivative at t > 0: lam, then (a*lam - t)/(a - 1), then zero."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("rho_prime is defined for t > 0")
        lam, a = self.lam, self.a
        out = np.where(
            t <= lam, lam, np.where(t <= a * lam, (a * lam - t) / (a - 1), 0.0)
        )
        return out if out.ndim else float(out)

    @property
    def weak_convexity(self) -> float:
        """Smallest mu with rho(t) + mu t^2 / 2 convex: 1 / (a - 1)."""
        return 1.0 / (self.a - 1.0)


def prox_radius(norm_v: float, pen: ScadPenalty, beta_pen: float) -> float:
    """Shrunken norm that minimizes beta/2 (r - |v|)^2 + rho(r) over r >= 0.

    The three cases are keyed on |v| at lam + lam/beta and a*lam; ties resolve
    to the lower-index case.  Requires beta (a - 1) > 1 so the middle case has
    positive curvature.
    """
    lam, a = pen.lam, pen.a
    if beta_pen <= 0 or beta_pen * (a - 1) <= 1:
        raise ConfigError(
            f"group shrinkage needs beta * (a - 1) > 1, got beta={beta_pen}, a={a}"
        )
    if lam == 0.0:
        return norm_v
    if norm_v <= lam + lam / beta_pen:
        return max(norm_v - lam / beta_pen, 0.0)
    if norm_v <= a * lam:
        r = ((a - 1) * beta_pen * norm_v - a * lam) / (a * beta_pen - beta_pen - 1)
        return min(r, norm_v)
    return norm_v


def group_prox(v: np.ndarray, pen: ScadPenalty, beta_pen: float) -> np.ndarray:
    """Rescale v along its own direction to the shrunken norm (exact zeros included)."""
    v = np.asarray(v, dtype=float)
    norm_v = float(np.linalg.norm(v))
    if norm_v == 0.0:
        return np.zeros_like(v)
    r = prox_radius(norm_v, pen, beta_pen)
    if r == 0.0:
        return np.zeros_like(v)
    return (r / norm_v) * v
