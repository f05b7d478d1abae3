"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np

from epidemic.forward import homogeneous_rates, solve_homogeneous
from epidemic.grid import GridSpec, ScalarField, boundary_mask, gamma_mask
from epidemic.inversion import WField
from epidemic.observation import DerivedData, Transport, compute_s_coefficients

RHO0 = (0.6, 0.8, 0.0)
STILL = (0.0, 0.0)


def inverse_grid(nx: int = 9, nt: int = 5) -> GridSpec:
    return GridSpec(1.0, 2.0, nx, -0.5, 0.5, nx, 0.0, 1.0, nt)


def homogeneous_reference(grid: GridSpec, beta: float = 0.1, gamma: float = 0.1,
                          rho0=RHO0) -> tuple[WField, list[ScalarField]]:
    """Exact W and mid-time populations of the spatially constant system."""
    y = solve_homogeneous(beta, gamma, rho0, grid.t)
    v = homogeneous_rates(beta, gamma, y)
    S, I = y[0], y[1]
    dS, dI = v[0], v[1]
    infection_rate = beta * (dS * I + S * dI)
    second = np.stack([-infection_rate, infection_rate, gamma * dI])
    values = np.concatenate([v, second])[:, :, None, None] * np.ones((1,) + grid.shape)
    spatial = grid.spatial()
    p = [ScalarField.constant(spatial, y[j, grid.mid_index]) for j in range(3)]
    return WField(grid, values), p


def homogeneous_data(grid: GridSpec, w: WField, p: list[ScalarField], d: float = 0.1) -> DerivedData:
    """Noise-free derived data consistent with a spatially constant W and no transport."""
    s = compute_s_coefficients(p[0], p[1], p[2], STILL, STILL, d)
    spatial = grid.spatial()
    G0 = w.values[:, :, gamma_mask(spatial)]
    G1 = np.zeros((6, grid.nt, int(boundary_mask(spatial).sum())))
    return DerivedData(grid=grid, G0=G0, G1=G1, s=s, p1=p[0], p2=p[1],
                       transport=Transport(d, STILL, STILL, STILL), c_floor=1e-3)
