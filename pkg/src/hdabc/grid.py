"""Bivariate densities tabulated on a rectangular grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

__all__ = ["GridDensity2D"]


@dataclass(frozen=True)
class GridDensity2D:
    """``density[i, k]`` is the density at ``(x[i], y[k])``."""

    x: np.ndarray
    y: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if d.shape != (x.size, y.size):
            raise ValueError(f"density shape {d.shape} does not match grid {(x.size, y.size)}")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("density values must be finite and nonnegative")
        for name, a in (("x", x), ("y", y), ("density", d)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def normalized(cls, x, y, values) -> "GridDensity2D":
        values = np.asarray(values, dtype=float)
        return cls(x, y, values / trapezoid(trapezoid(values, y, axis=1), x))

    @classmethod
    def from_log(cls, x, y, logvalues) -> "GridDensity2D":
        logvalues = np.asarray(logvalues, dtype=float)
        return cls.normalized(x, y, np.exp(logvalues - logvalues.max()))

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.density, self.y, axis=1), self.x))

    def cell_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights so that ``sum(w * density)`` is the integral."""
        return np.outer(_trap_weights(self.x), _trap_weights(self.y))

    def same_grid(self, other: "GridDensity2D") -> bool:
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    def moments(self):
        """Mean vector and covariance matrix of the tabulated density."""
        w = self.cell_weights() * self.density
        w = w / w.sum()
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        mx, my = (w * X).sum(), (w * Y).sum()
        cxx = (w * (X - mx) ** 2).sum()
        cyy = (w * (Y - my) ** 2).sum()
        cxy = (w * (X - mx) * (Y - my)).sum()
        return np.array([mx, my]), np.array([[cxx, cxy], [cxy, cyy]])

    def correlation(self) -> float:
        _, cov = self.moments()
        return float(cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]))

    def transpose(self) -> "GridDensity2D":
        return GridDensity2D(self.y, self.x, self.density.T)


def _trap_weights(t) -> np.ndarray:
    dt = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w
