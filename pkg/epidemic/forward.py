"""Semi-implicit finite-difference solver for the diffusive SIR system.

The three populations obey

    dS/dt = d lap S - div(S q_S) - beta S I
    dI/dt = d lap I - div(I q_I) + beta S I
    dR/dt = d lap R - div(R q_R) + gamma I

on a rectangle with Neumann data on its boundary. Diffusion is implicit
(backward Euler, factored once); advection and reaction are explicit, combined
by a Heun predictor-corrector whose stages are both closed by the diffusion
solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import splu

from .exceptions import ConfigurationError, DivergenceError, StabilityError
from .grid import (
    GridSpec,
    ScalarField,
    VectorField2,
    axis_operator,
    boundary_mask,
    divergence_array,
    normal_derivative_matrix,
    resample,
)

logger = logging.getLogger(__name__)

SPECIES = ("S", "I", "R")

Velocity = VectorField2 | Sequence[float]
FluxFunction = Callable[[int, np.ndarray, np.ndarray, float], np.ndarray]
SourceFunction = Callable[[float], Sequence[np.ndarray]]


def velocity_arrays(q: Velocity, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(qx, qy) on the spatial nodes of ``grid``."""
    spatial = grid.spatial()
    if isinstance(q, VectorField2):
        if q.grid != spatial:
            raise ConfigurationError("velocity field is defined on a different grid")
        return q.u.values, q.v.values
    qx, qy = (float(c) for c in q)
    return np.full(spatial.shape, qx), np.full(spatial.shape, qy)


@dataclass(frozen=True, eq=False)
class SirParams:
    d: float
    q_S: Velocity
    q_I: Velocity
    q_R: Velocity
    beta: ScalarField
    gamma: ScalarField
    rho0_S: ScalarField
    rho0_I: ScalarField
    rho0_R: ScalarField
    flux: FluxFunction | None = None
    source: SourceFunction | None = None

    def __post_init__(self) -> None:
        if not self.d > 0:
            raise ConfigurationError(f"diffusivity must be positive, got {self.d}")
        grids = {f.grid for f in (self.beta, self.gamma, self.rho0_S, self.rho0_I, self.rho0_R)}
        if len(grids) != 1:
            raise ConfigurationError("coefficients and initial states must share one spatial grid")

    @property
    def velocities(self) -> tuple[Velocity, Velocity, Velocity]:
        return self.q_S, self.q_I, self.q_R


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    rho_S: ScalarField
    rho_I: ScalarField
    rho_R: ScalarField

    @property
    def grid(self) -> GridSpec:
        return self.rho_S.grid

    @property
    def fields(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return self.rho_S, self.rho_I, self.rho_R


def max_stable_step(params: SirParams, grid: GridSpec) -> float:
    """Largest internal step the explicit advection-reaction part tolerates."""
    h_min = min(grid.hx, grid.hy)
    advective = 0.0
    diffusive = 0.0
    for q in params.velocities:
        qx, qy = velocity_arrays(q, grid)
        advective = max(advective, float(np.max(np.abs(qx) + np.abs(qy))) / h_min)
        diffusive = max(diffusive, float(np.max(qx**2 + qy**2)) / (2 * params.d))
    reaction = float(np.max(np.abs(params.beta.values))) * float(
        np.max(np.abs(params.rho0_S.values)) + np.max(np.abs(params.rho0_I.values))
    ) + float(np.max(np.abs(params.gamma.values)))
    rate = max(advective, diffusive, reaction)
    return np.inf if rate == 0.0 else 1.0 / rate


class SemiImplicitSolver:
    """Time stepper bound to one parameter set and one spatial grid."""

    def __init__(self, params: SirParams, grid: GridSpec, dt: float) -> None:
        self.params = params
        self.grid = grid.spatial()
        self.dt = dt
        self.velocities = [velocity_arrays(q, self.grid) for q in params.velocities]
        self.boundary = boundary_mask(self.grid)
        X, Y = self.grid.mesh()
        self.boundary_x = X[self.boundary]
        self.boundary_y = Y[self.boundary]
        self._solve = splu(self._system_matrix().tocsc()).solve

    def _system_matrix(self) -> sp.csr_matrix:
        n = self.grid.spatial_size
        lap = axis_operator(self.grid, "x", 2) + axis_operator(self.grid, "y", 2)
        implicit = sp.identity(n, format="csr") - self.dt * self.params.d * lap
        interior = sp.diags((~self.boundary).ravel().astype(float))
        neumann, nodes = normal_derivative_matrix(self.grid)
        embed = sp.csr_matrix((np.ones(nodes.size), (nodes, np.arange(nodes.size))), shape=(n, nodes.size))
        return (interior @ implicit + embed @ neumann).tocsr()

    def explicit_rates(self, state: Sequence[np.ndarray], t: float) -> list[np.ndarray]:
        S, I, R = state
        beta = self.params.beta.values
        gamma = self.params.gamma.values
        infection = beta * S * I
        reaction = (-infection, infection, gamma * I)
        rates = [
            -divergence_array(u, qx, qy, self.grid) + r
            for u, (qx, qy), r in zip(state, self.velocities, reaction)
        ]
        if self.params.source is not None:
            rates = [r + np.asarray(f) for r, f in zip(rates, self.params.source(t))]
        return rates

    def _close(self, rhs: np.ndarray, species: int, t: float) -> np.ndarray:
        rhs = rhs.copy()
        if self.params.flux is None:
            rhs[self.boundary] = 0.0
        else:
            rhs[self.boundary] = self.params.flux(species, self.boundary_x, self.boundary_y, t)
        return self._solve(rhs.ravel()).reshape(self.grid.shape)

    def step(self, state: Sequence[np.ndarray], t: float) -> list[np.ndarray]:
        dt = self.dt
        rates = self.explicit_rates(state, t)
        predictor = [self._close(u + dt * r, j, t + dt) for j, (u, r) in enumerate(zip(state, rates))]
        corrected = self.explicit_rates(predictor, t + dt)
        return [
            self._close(u + 0.5 * dt * (r0 + r1), j, t + dt)
            for j, (u, r0, r1) in enumerate(zip(state, rates, corrected))
        ]


def forward_solve(params: SirParams, grid: GridSpec, substeps: int = 1) -> ForwardSolution:
    """March from t_min to t_max, storing every grid time slice.

    ``substeps`` internal steps are taken between consecutive stored slices.
    """
    if not grid.has_time:
        raise ConfigurationError("forward_solve needs a space-time grid")
    if params.beta.grid != grid.spatial():
        raise ConfigurationError("coefficients are not defined on the simulation grid")
    if substeps < 1:
        raise ConfigurationError(f"substeps must be >= 1, got {substeps}")
    dt = grid.ht / substeps
    max_dt = max_stable_step(params, grid)
    if dt > max_dt:
        raise StabilityError(f"time step {dt:.6g} violates the explicit stability bound", max_dt)

    solver = SemiImplicitSolver(params, grid, dt)
    state = [params.rho0_S.values.copy(), params.rho0_I.values.copy(), params.rho0_R.values.copy()]
    history = [np.empty(grid.shape) for _ in SPECIES]
    for stored, u in zip(history, state):
        stored[0] = u

    total = (grid.nt - 1) * substeps
    report_every = max(1, total // 10)
    step = 0
    for k in range(1, grid.nt):
        for _ in range(substeps):
            t = grid.t_min + step * dt
            state = solver.step(state, t)
            step += 1
            if not all(np.all(np.isfinite(u)) for u in state):
                logger.error("forward march produced non-finite values at step %d", step)
                raise DivergenceError("non-finite value in forward march", step)
            if step % report_every == 0:
                logger.debug("forward march %d/%d steps", step, total)
        for stored, u in zip(history, state):
            stored[k] = u

    logger.info("forward solve done: %d steps of %.3g on %dx%d nodes", total, dt, grid.nx, grid.ny)
    return ForwardSolution(*(ScalarField(grid, values) for values in history))


def restrict_to_inverse_grid(solution: ForwardSolution, inverse_grid: GridSpec) -> ForwardSolution:
    """Multilinear interpolation of every population onto ``inverse_grid``."""
    if not solution.grid.contains(inverse_grid):
        raise ConfigurationError("inverse grid nodes fall outside the simulation grid")
    return ForwardSolution(*(resample(f, inverse_grid) for f in solution.fields))


def solve_homogeneous(beta: float, gamma: float, rho0: Sequence[float], times: np.ndarray) -> np.ndarray:
    """Spatially constant solution by a high-accuracy ODE integration, shape (3, len(times))."""

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        S, I, _R = y
        return np.array([-beta * S * I, beta * S * I, gamma * I])

    result = solve_ivp(rhs, (times[0], times[-1]), np.asarray(rho0, dtype=float), t_eval=times,
                       method="DOP853", rtol=1e-12, atol=1e-14)
    return result.y


def homogeneous_rates(beta: float, gamma: float, y: np.ndarray) -> np.ndarray:
    """Time derivative of the spatially constant system for states ``y`` of shape (3, m)."""
    S, I = y[0], y[1]
    return np.stack([-beta * S * I, beta * S * I, gamma * I])
