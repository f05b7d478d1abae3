"""Measurement extraction, noise, spline differentiation and derived data.

The inverse problem sees three kinds of data per population j:

* ``p_j``: the population over the measurement domain at the mid time,
* ``r_j``: its outward normal derivative on the whole boundary, all times,
* ``f_j``: its value on the face x = x_max, all times.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator, make_smoothing_spline

from .exceptions import ConfigurationError, DataValidityError, DimensionError
from .forward import ForwardSolution, Velocity, restrict_to_inverse_grid, velocity_arrays
from .grid import (
    GridSpec,
    ScalarField,
    boundary_mask,
    divergence_array,
    gamma_mask,
    laplacian_array,
    outward_normals,
)

logger = logging.getLogger(__name__)

NOISE_ORDER = ("p1", "p2", "p3", "r1", "r2", "r3", "f1", "f2", "f3")


@dataclass(frozen=True, eq=False)
class Trace:
    """Values on a subset of the spatial boundary nodes at every grid time.

    ``values`` has shape (nt, n_nodes), nodes in ascending flat index order.
    """

    grid: GridSpec
    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.grid.nt, int(self.mask.sum()))
        if self.values.shape != expected:
            raise DimensionError(f"trace values have shape {self.values.shape}, expected {expected}")

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @classmethod
    def from_field(cls, field: ScalarField, mask: np.ndarray) -> "Trace":
        return cls(field.grid, mask, field.values[:, mask])

    def to_field(self) -> ScalarField:
        values = np.zeros(self.grid.shape)
        values[:, self.mask] = self.values
        return ScalarField(self.grid, values)

    def with_values(self, values: np.ndarray) -> "Trace":
        return replace(self, values=values)


@dataclass(frozen=True)
class NoiseModel:
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta < 1.0:
            raise ConfigurationError(f"noise level must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True, eq=False)
class CauchyData:
    p: tuple[ScalarField, ScalarField, ScalarField]
    r: tuple[Trace, Trace, Trace]
    f: tuple[Trace, Trace, Trace]
    delta: float = 0.0
    seed: int | None = None

    @property
    def grid(self) -> GridSpec:
        """The space-time inverse grid."""
        return self.r[0].grid

    def matrices(self) -> list[np.ndarray]:
        """All nine data matrices in noise-stream order."""
        return [f.values for f in self.p] + [t.values for t in self.r] + [t.values for t in self.f]


@dataclass(frozen=True, eq=False)
class SCoefficients:
    s1: ScalarField
    s2: ScalarField
    s3: ScalarField
    s4: ScalarField

    def as_tuple(self) -> tuple[ScalarField, ScalarField, ScalarField, ScalarField]:
        return self.s1, self.s2, self.s3, self.s4


@dataclass(frozen=True)
class Transport:
    """Known diffusivity and velocity fields on the measurement domain."""

    d: float
    q_S: Velocity
    q_I: Velocity
    q_R: Velocity

    def arrays(self, grid: GridSpec) -> list[tuple[np.ndarray, np.ndarray]]:
        return [velocity_arrays(q, grid) for q in (self.q_S, self.q_I, self.q_R)]


@dataclass(frozen=True, eq=False)
class DerivedData:
    """Everything the inversion consumes.

    ``G0`` has shape (6, nt, n_gamma) and ``G1`` shape (6, nt, n_boundary);
    components are the first three time derivatives followed by the three
    second time derivatives of the traces.
    """

    grid: GridSpec
    G0: np.ndarray
    G1: np.ndarray
    s: SCoefficients
    p1: ScalarField
    p2: ScalarField
    transport: Transport
    c_floor: float

    @property
    def gamma_nodes(self) -> np.ndarray:
        return np.flatnonzero(gamma_mask(self.grid))

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(boundary_mask(self.grid))


def check_floor(p1: ScalarField, p2: ScalarField, c_floor: float) -> None:
    for name, p in (("p1", p1), ("p2", p2)):
        smallest = float(np.min(np.abs(p.values)))
        if smallest < c_floor:
            raise DataValidityError(f"min |{name}| = {smallest:.3g} is below the floor {c_floor:.3g}")


def _normal_derivatives(field: ScalarField, inverse_grid: GridSpec) -> np.ndarray:
    """Outward normal derivative of a fine space-time field at the inverse boundary nodes."""
    fine = field.grid
    interpolator = RegularGridInterpolator(fine.coordinates(), field.values, method="linear",
                                           bounds_error=False, fill_value=None)
    spatial = inverse_grid.spatial()
    mask = boundary_mask(spatial)
    nx_, ny_ = outward_normals(spatial)
    X, Y = spatial.mesh()
    bx, by = X[mask], Y[mask]
    normal_x, normal_y = nx_[mask], ny_[mask]
    h = np.where(normal_x != 0.0, fine.hx, fine.hy)
    times = inverse_grid.t

    def at(offset: int) -> np.ndarray:
        px = bx - offset * h * normal_x
        py = by - offset * h * normal_y
        T, P = np.meshgrid(times, np.arange(bx.size), indexing="ij")
        points = np.stack([T.ravel(), py[P.ravel()], px[P.ravel()]], axis=-1)
        return interpolator(points).reshape(times.size, bx.size)

    return (1.5 * at(0) - 2.0 * at(1) + 0.5 * at(2)) / h


def extract_measurements(solution: ForwardSolution, inverse_grid: GridSpec, c_floor: float = 1e-3) -> CauchyData:
    """Sample the fine forward solution the way the measurements are taken."""
    if not solution.grid.contains(inverse_grid):
        raise ConfigurationError("inverse grid nodes fall outside the simulation grid")
    spatial = inverse_grid.spatial()
    if not (solution.grid.x_min < spatial.x_min and spatial.x_max < solution.grid.x_max
            and solution.grid.y_min < spatial.y_min and spatial.y_max < solution.grid.y_max):
        raise ConfigurationError("the measurement domain must lie strictly inside the simulation grid")
    mid = inverse_grid.mid_index
    restricted = restrict_to_inverse_grid(solution, inverse_grid)
    p = tuple(f.at_time(mid) for f in restricted.fields)
    f = tuple(Trace.from_field(field, gamma_mask(spatial)) for field in restricted.fields)
    r = tuple(Trace(inverse_grid, boundary_mask(spatial), _normal_derivatives(field, inverse_grid))
              for field in solution.fields)
    check_floor(p[0], p[1], c_floor)
    logger.info("extracted measurements on %dx%dx%d grid", inverse_grid.nx, inverse_grid.ny, inverse_grid.nt)
    return CauchyData(p=p, r=r, f=f)


def add_noise(data: CauchyData, model: NoiseModel) -> CauchyData:
    """Perturb every data matrix A as A + delta * max|A| * U(-1, 1), independently per matrix."""
    if model.delta == 0.0:
        return replace(data, delta=0.0, seed=model.seed)
    streams = np.random.SeedSequence(model.seed).spawn(len(NOISE_ORDER))
    noisy = []
    for matrix, stream in zip(data.matrices(), streams):
        draw = np.random.default_rng(stream).uniform(-1.0, 1.0, size=matrix.shape)
        noisy.append(matrix + model.delta * np.max(np.abs(matrix)) * draw)
    p = tuple(ScalarField(field.grid, values) for field, values in zip(data.p, noisy[0:3]))
    r = tuple(trace.with_values(values) for trace, values in zip(data.r, noisy[3:6]))
    f = tuple(trace.with_values(values) for trace, values in zip(data.f, noisy[6:9]))
    return CauchyData(p=p, r=r, f=f, delta=model.delta, seed=model.seed)


def _check_axis(x: np.ndarray, minimum: int) -> float:
    if x.size < minimum:
        raise DimensionError(f"spline smoothing needs at least {minimum} nodes, got {x.size}")
    steps = np.diff(x)
    if np.any(steps <= 0.0):
        raise DimensionError("spline nodes must be strictly increasing")
    return float(steps.mean())


def smoothing_spline(x: np.ndarray, y: np.ndarray, p_sm: float | None):
    """Cubic smoothing spline through ``y`` along axis 0.

    ``p_sm`` weighs fidelity against roughness on the index-normalized axis:
    1 interpolates (not-a-knot), smaller values smooth more. ``None`` picks
    the penalty of every column by generalized cross-validation.
    """
    if p_sm is not None and not 0.0 < p_sm <= 1.0:
        raise ConfigurationError(f"smoothing parameter must lie in (0, 1], got {p_sm}")
    h = _check_axis(x, 5)
    y = np.asarray(y, dtype=float)
    if p_sm == 1.0:
        return CubicSpline(x, y, axis=0, bc_type="not-a-knot")
    lam = None if p_sm is None else (1.0 - p_sm) / p_sm * h**3
    columns = y.reshape(y.shape[0], -1)
    splines = [make_smoothing_spline(x, columns[:, c], lam=lam) for c in range(columns.shape[1])]
    return _SplineStack(splines, y.shape[1:])


class _SplineStack:
    """Column-wise smoothing splines behaving like one vector-valued spline."""

    def __init__(self, splines: list, trailing: tuple[int, ...], nu: int = 0) -> None:
        self.splines = splines
        self.trailing = trailing
        self.nu = nu

    def derivative(self, nu: int = 1) -> "_SplineStack":
        return _SplineStack(self.splines, self.trailing, self.nu + nu)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        columns = [s.derivative(self.nu)(x) if self.nu else s(x) for s in self.splines]
        return np.stack(columns, axis=-1).reshape((np.size(x),) + self.trailing)


def smooth_diff_time(values: np.ndarray, t: np.ndarray, p_sm: float,
                     orders: Sequence[int] = (1, 2)) -> dict[int, np.ndarray]:
    """Spline-smooth each column of ``values`` (shape (nt, ...)) in time and differentiate.

    Returns a map from derivative order to an array shaped like ``values``.
    """
    if any(order not in (0, 1, 2) for order in orders):
        raise ConfigurationError(f"unsupported derivative orders {orders}")
    if np.ptp(t) == 0.0:
        raise DimensionError("time nodes are all equal")
    spline = smoothing_spline(np.asarray(t, dtype=float), values, p_sm)
    return {order: spline.derivative(order)(t) if order else spline(t) for order in orders}


def smooth_field(field: ScalarField, p_sm: float | None) -> ScalarField:
    """Two-dimensional smoothing: a spline pass along x on every row, then along y on every column.

    With ``p_sm=None`` each pass chooses its penalty by generalized
    cross-validation, so the smoothing follows the noise in the data.
    """
    grid = field.grid
    if p_sm == 1.0 or np.ptp(field.values) == 0.0:
        return field
    rows = smoothing_spline(grid.x, field.values.T, p_sm)(grid.x).T
    both = smoothing_spline(grid.y, rows, p_sm)(grid.y)
    return ScalarField(grid, both)


def compute_s_coefficients(p1: ScalarField, p2: ScalarField, p3: ScalarField, q_S: Velocity, q_R: Velocity,
                           d: float, p_sm_space: float = 1.0, c_floor: float = 1e-3) -> SCoefficients:
    grid = p1.grid
    p1, p2, p3 = (smooth_field(p, p_sm_space) for p in (p1, p2, p3))
    check_floor(p1, p2, c_floor)
    qS = velocity_arrays(q_S, grid)
    qR = velocity_arrays(q_R, grid)
    s1 = -1.0 / (p1.values * p2.values)
    s2 = -s1 * (d * laplacian_array(p1.values, grid) - divergence_array(p1.values, *qS, grid))
    s3 = 1.0 / p2.values
    s4 = -s3 * (d * laplacian_array(p3.values, grid) - divergence_array(p3.values, *qR, grid))
    return SCoefficients(*(ScalarField(grid, s) for s in (s1, s2, s3, s4)))


def build_boundary_vectors(data: CauchyData, transport: Transport, p_sm: float = 0.99,
                           p_sm_space: float | None = None, c_floor: float = 1e-3) -> DerivedData:
    """Differentiate the traces in time and compute the s-coefficients."""
    grid = data.grid
    if grid.nt < 5:
        raise DimensionError(f"time smoothing needs nt >= 5, got {grid.nt}")
    t = grid.t
    f_derivatives = [smooth_diff_time(trace.values, t, p_sm) for trace in data.f]
    r_derivatives = [smooth_diff_time(trace.values, t, p_sm) for trace in data.r]
    G0 = np.stack([d[1] for d in f_derivatives] + [d[2] for d in f_derivatives])
    G1 = np.stack([d[1] for d in r_derivatives] + [d[2] for d in r_derivatives])
    p1, p2, p3 = (smooth_field(p, p_sm_space) for p in data.p)
    s = compute_s_coefficients(p1, p2, p3, transport.q_S, transport.q_R, transport.d, 1.0, c_floor)
    logger.info("derived data ready: |G0|max=%.3g |G1|max=%.3g", np.max(np.abs(G0)), np.max(np.abs(G1)))
    return DerivedData(grid=grid, G0=G0, G1=G1, s=s, p1=p1, p2=p2, transport=transport,
                       c_floor=c_floor)
