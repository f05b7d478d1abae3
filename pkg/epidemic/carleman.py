"""Carleman weight, numerical checks of the two weighted estimates, parameter schedules."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, EvaluationError, ScheduleError
from .grid import GridSpec, ddt, ddx, ddy, laplacian_array, quadrature_weights, time_integral_array

logger = logging.getLogger(__name__)

MAX_LOG = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class CarlemanWeight:
    """phi(x, t) = exp(2 lam (x^2 - (t - T/2)^2)), with an optional exp(-2 lam b^2) normalization."""

    lam: float
    b: float
    T: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ConfigurationError(f"lambda must be finite and non-negative, got {self.lam}")
        if not (self.b > 0 and self.T > 0):
            raise ConfigurationError("b and T must be positive")

    def log_weight(self, x: np.ndarray | float, t: np.ndarray | float, normalized: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        log_phi = 2.0 * self.lam * (x**2 - (t - self.T / 2) ** 2)
        if normalized:
            log_phi = log_phi - 2.0 * self.lam * self.b**2
        return log_phi

    def __call__(self, x: np.ndarray | float, t: np.ndarray | float, normalized: bool = False) -> np.ndarray:
        log_phi = self.log_weight(x, t, normalized)
        if np.any(log_phi > MAX_LOG):
            raise EvaluationError(f"Carleman weight overflows (log weight {float(np.max(log_phi)):.1f})")
        return np.exp(log_phi)

    def on_grid(self, grid: GridSpec, normalized: bool = True) -> np.ndarray:
        """Weight at every node of a space-time grid, shape (nt, ny, nx)."""
        X, _Y, T = grid.mesh()
        return self(X, T, normalized)


def cwf_eval(weight: CarlemanWeight, x: float, t: float, normalized: bool = False) -> float:
    return float(weight(x, t, normalized))


def default_check_grid() -> GridSpec:
    return GridSpec(1.0, 2.0, 17, -0.5, 0.5, 17, 0.0, 1.0, 11)


# --- Volterra estimate ----------------------------------------------------------


def volterra_ratio(f: np.ndarray, grid: GridSpec, lam: float) -> float:
    """lam * int (int_{T/2}^t f)^2 phi / int f^2 phi; zero when f vanishes."""
    weight = CarlemanWeight(lam, grid.x_max, grid.t_max - grid.t_min)
    phi = weight.on_grid(grid) * quadrature_weights(grid).values
    integral = time_integral_array(f, grid, grid.mid_index)
    denominator = float(np.sum(f**2 * phi))
    if denominator == 0.0:
        return 0.0
    return lam * float(np.sum(integral**2 * phi)) / denominator


@dataclass
class EstimateRow:
    lam: float
    constant: float
    status: str
    extra: dict[str, float] = field(default_factory=dict)


@dataclass
class EstimateReport:
    name: str
    rows: list[EstimateRow]
    passed: bool

    @property
    def constant(self) -> float:
        return max((row.constant for row in self.rows), default=0.0)


def _check_lams(lams: Sequence[float]) -> list[float]:
    lams = [float(lam) for lam in lams]
    if not lams:
        raise ConfigurationError("the lambda list is empty")
    if any(lam <= 0 for lam in lams):
        raise ConfigurationError("estimate checks need lambda > 0")
    return lams


def check_volterra_estimate(lams: Sequence[float], trials: int = 100, seed: int = 0,
                            grid: GridSpec | None = None) -> EstimateReport:
    """Empirical max of the weighted Volterra ratio per lambda.

    Passes when the maximum stays bounded: it may grow by at most a factor 3
    between consecutive entries of the lambda list.
    """
    lams = _check_lams(lams)
    grid = grid or default_check_grid()
    rng = np.random.default_rng(seed)
    samples = [rng.standard_normal(grid.shape) for _ in range(trials)]
    rows = []
    for lam in lams:
        worst = max((volterra_ratio(f, grid, lam) for f in samples), default=0.0)
        rows.append(EstimateRow(lam, worst, "pass"))
    passed = True
    for previous, current in zip(rows, rows[1:]):
        if current.constant > 3.0 * previous.constant and current.constant > 0.0:
            current.status = "fail"
            passed = False
    logger.info("Volterra check: %s", ", ".join(f"lam={r.lam:g} R={r.constant:.4g}" for r in rows))
    return EstimateReport("volterra", rows, passed)


# --- Carleman estimate for u_t - d lap u -----------------------------------------


def cutoff(grid: GridSpec) -> np.ndarray:
    """((x-a)(x-b)(y-c)(y-d))^2: the value and normal derivative vanish on the boundary."""
    X, Y = grid.spatial().mesh()
    return ((X - grid.x_min) * (X - grid.x_max) * (Y - grid.y_min) * (Y - grid.y_max)) ** 2


def random_test_field(grid: GridSpec, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """Cutoff times a random combination of low spatial modes and a quadratic in time."""
    xi = (grid.x - grid.x_min) / (grid.x_max - grid.x_min)
    eta = (grid.y - grid.y_min) / (grid.y_max - grid.y_min)
    tau = (grid.t - grid.t_min) / (grid.t_max - grid.t_min)
    spatial = np.zeros((grid.ny, grid.nx))
    for kx in range(modes):
        for ky in range(modes):
            spatial += rng.standard_normal() * np.outer(np.cos(np.pi * ky * eta), np.cos(np.pi * kx * xi))
    temporal = rng.standard_normal(3)
    profile = temporal[0] + temporal[1] * tau + temporal[2] * tau**2
    return profile[:, None, None] * (spatial * cutoff(grid))[None]


def carleman_sides(u: np.ndarray, grid: GridSpec, lam: float, d: float) -> tuple[float, float, float, float]:
    """Normalized discrete sides of the estimate.

    Returns (left, gradient term, cubic term, boundary term): the weighted
    squared residual of u_t - d lap u, lam int |grad u|^2 phi,
    lam^3 int u^2 phi, and the time-boundary penalty.
    """
    T = grid.t_max - grid.t_min
    weight = CarlemanWeight(lam, grid.x_max, T)
    phi = weight.on_grid(grid) * quadrature_weights(grid).values
    residual = ddt(u, grid) - d * laplacian_array(u, grid)
    gx, gy = ddx(u, grid), ddy(u, grid)
    left = float(np.sum(residual**2 * phi))
    gradient = lam * float(np.sum((gx**2 + gy**2) * phi))
    cubic = lam**3 * float(np.sum(u**2 * phi))
    spatial_weights = quadrature_weights(grid.spatial()).values

    def h1(k: int) -> float:
        return float(np.sum((u[k] ** 2 + gx[k] ** 2 + gy[k] ** 2) * spatial_weights))

    boundary = (h1(0) + h1(-1)) * lam**2 * math.exp(-lam * T**2 / 2)
    return left, gradient, cubic, boundary


def check_carleman_estimate(lams: Sequence[float], trials: int = 50, seed: int = 0, d: float = 0.1,
                            grid: GridSpec | None = None) -> EstimateReport:
    """Monitoring check of the parabolic Carleman estimate on random admissible fields.

    The empirical constant is min(left / main) over the trials, calibrated at
    the smallest lambda; the largest lambda passes when every trial keeps
    left >= 0.5 * C_emp * main.
    """
    lams = sorted(_check_lams(lams))
    grid = grid or default_check_grid()
    rng = np.random.default_rng(seed)
    fields = [random_test_field(grid, rng) for _ in range(trials)]
    rows = []
    for lam in lams:
        sides = [carleman_sides(u, grid, lam, d) for u in fields]
        ratios = [left / (grad + cubic) for left, grad, cubic, _ in sides if grad + cubic > 0]
        cubic_share = float(np.mean([cubic / (grad + cubic) for _, grad, cubic, _ in sides if grad + cubic > 0]))
        constant = min(ratios) if ratios else 0.0
        rows.append(EstimateRow(lam, constant, "monitor",
                                {"cubic_share": cubic_share,
                                 "boundary_max": max((s[3] for s in sides), default=0.0)}))
    calibrated = rows[0].constant
    largest = rows[-1]
    held = all(left >= 0.5 * calibrated * (grad + cubic)
               for left, grad, cubic, _ in (carleman_sides(u, grid, largest.lam, d) for u in fields))
    largest.status = "pass" if held else "monitor"
    logger.info("Carleman check: C_emp=%.4g at lam=%g, largest lam %s", calibrated, rows[0].lam, largest.status)
    return EstimateReport("carleman", rows, held)


# --- parameter schedules ---------------------------------------------------------------


@dataclass(frozen=True)
class TheoryParams:
    alpha: float
    m: float
    s: float
    lam: float
    xi: float
    rho: float


def xi_for_lambda(lam: float, T: float) -> float:
    """Regularization parameter tied to lambda: 2 exp(-lam T^2 / 4)."""
    return 2.0 * math.exp(-lam * T**2 / 4)


def theory_schedule(delta: float, alpha: float, b: float, T: float, lam_floor: float) -> TheoryParams:
    """lambda(delta) = ln(delta^(-1/m)) and the matching xi(delta)."""
    if not 0.0 < alpha < 1.0 / math.sqrt(2.0):
        raise ScheduleError(f"alpha must lie in (0, 1/sqrt(2)), got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ScheduleError(f"noise level must lie in (0, 1), got {delta}")
    threshold = 8.0 * b**2 / (1.0 - 2.0 * alpha**2)
    if not T**2 > threshold:
        raise ScheduleError(
            f"T^2 = {T**2:.4g} must exceed 8 b^2 / (1 - 2 alpha^2) = {threshold:.4g}; "
            "use a larger T or a smaller alpha"
        )
    m = alpha**2 * T**2 / 2 + 2 * b**2
    s = T**2 / 4 * ((1 - 2 * alpha**2) - 8 * b**2 / T**2)
    lam = -math.log(delta) / m
    if lam < lam_floor * (1 - 1e-12):
        raise ScheduleError(f"lambda(delta) = {lam:.6g} is below the floor {lam_floor:.6g}; the noise level is too large")
    return TheoryParams(alpha=alpha, m=m, s=s, lam=lam, xi=xi_for_lambda(lam, T), rho=max(1.0, s / m))
