"""Uniform tensor grids, fields on them and finite-difference operators.

Values are always stored t-major, then y, then x: a space-time field has
shape ``(nt, ny, nx)`` and a spatial field ``(ny, nx)``. The flat unknown
index used by the sparse operators is ``(k * ny + j) * nx + i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator

from .exceptions import ConfigurationError, DimensionError, EvaluationError, FieldParseError

logger = logging.getLogger(__name__)

MAGIC = "FLD1"


@dataclass(frozen=True)
class GridSpec:
    """Rectangle in (x, y), optionally extended by a time interval."""

    x_min: float
    x_max: float
    nx: int
    y_min: float
    y_max: float
    ny: int
    t_min: float | None = None
    t_max: float | None = None
    nt: int | None = None

    def __post_init__(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise DimensionError(f"need at least 2 points per axis, got nx={self.nx}, ny={self.ny}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigurationError("grid bounds must satisfy x_min < x_max and y_min < y_max")
        time_fields = (self.t_min, self.t_max, self.nt)
        if any(v is None for v in time_fields) and any(v is not None for v in time_fields):
            raise ConfigurationError("t_min, t_max and nt must be given together")
        if self.has_time:
            if self.nt < 2:
                raise DimensionError(f"need at least 2 time points, got nt={self.nt}")
            if not self.t_min < self.t_max:
                raise ConfigurationError("grid bounds must satisfy t_min < t_max")

    @property
    def has_time(self) -> bool:
        return self.nt is not None

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def ht(self) -> float:
        self._require_time()
        return (self.t_max - self.t_min) / (self.nt - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return self.y_min + np.arange(self.ny) * self.hy

    @property
    def t(self) -> np.ndarray:
        self._require_time()
        return self.t_min + np.arange(self.nt) * self.ht

    @property
    def shape(self) -> tuple[int, ...]:
        if self.has_time:
            return (self.nt, self.ny, self.nx)
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spatial_size(self) -> int:
        return self.nx * self.ny

    def axes(self) -> list[tuple[float, float, int]]:
        """(min, max, count) per axis in storage order."""
        spatial = [(self.y_min, self.y_max, self.ny), (self.x_min, self.x_max, self.nx)]
        if self.has_time:
            return [(self.t_min, self.t_max, self.nt), *spatial]
        return spatial

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Axis coordinate vectors in storage order."""
        if self.has_time:
            return (self.t, self.y, self.x)
        return (self.y, self.x)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcast coordinate arrays, ``(X, Y)`` or ``(X, Y, T)``."""
        if self.has_time:
            T, Y, X = np.meshgrid(self.t, self.y, self.x, indexing="ij")
            return X, Y, T
        Y, X = np.meshgrid(self.y, self.x, indexing="ij")
        return X, Y

    def spatial(self) -> "GridSpec":
        return replace(self, t_min=None, t_max=None, nt=None)

    def with_time(self, t_min: float, t_max: float, nt: int) -> "GridSpec":
        return replace(self, t_min=t_min, t_max=t_max, nt=nt)

    def time_index(self, t0: float) -> int:
        """Index of the time node at ``t0``; the node must exist."""
        self._require_time()
        position = (t0 - self.t_min) / self.ht
        k = int(round(position))
        if not 0 <= k < self.nt or abs(position - k) > 1e-9:
            raise ConfigurationError(f"t0={t0} is not a node of the time grid")
        return k

    @property
    def mid_index(self) -> int:
        """Index of t = (t_min + t_max)/2, which requires an odd nt."""
        self._require_time()
        if self.nt % 2 == 0:
            raise ConfigurationError(f"nt must be odd so that the mid time is a grid node, got {self.nt}")
        return self.nt // 2

    def contains(self, other: "GridSpec", tol: float = 1e-12) -> bool:
        """Whether every node of ``other`` lies in the closed hull of this grid."""
        inside = (
            self.x_min - tol <= other.x_min
            and other.x_max <= self.x_max + tol
            and self.y_min - tol <= other.y_min
            and other.y_max <= self.y_max + tol
        )
        if other.has_time and self.has_time:
            inside = inside and self.t_min - tol <= other.t_min and other.t_max <= self.t_max + tol
        return inside

    def to_dict(self) -> dict[str, Any]:
        data = {"x_min": self.x_min, "x_max": self.x_max, "nx": self.nx,
                "y_min": self.y_min, "y_max": self.y_max, "ny": self.ny}
        if self.has_time:
            data.update({"t_min": self.t_min, "t_max": self.t_max, "nt": self.nt})
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GridSpec":
        return cls(**data)

    def _require_time(self) -> None:
        if not self.has_time:
            raise DimensionError("operation needs a space-time grid")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values of a scalar quantity on a spatial or space-time grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise DimensionError(
                    f"field holds {values.size} values but the grid has {self.grid.size} points"
                )
            values = values.reshape(self.grid.shape)
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            raise EvaluationError("non-finite field value", tuple(int(i) for i in bad[0]))
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[..., Any]) -> "ScalarField":
        """Sample ``func(x, y)`` or ``func(x, y, t)`` on the grid nodes."""
        values = np.broadcast_to(np.asarray(func(*grid.mesh()), dtype=float), grid.shape)
        return cls(grid, np.array(values))

    def at_time(self, k: int) -> "ScalarField":
        return ScalarField(self.grid.spatial(), self.values[k])


@dataclass(frozen=True, eq=False)
class VectorField2:
    """Two-component vector field on a spatial grid."""

    u: ScalarField
    v: ScalarField

    def __post_init__(self) -> None:
        if self.u.grid != self.v.grid:
            raise DimensionError("vector field components live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @classmethod
    def constant(cls, grid: GridSpec, vector: Sequence[float]) -> "VectorField2":
        return cls(ScalarField.constant(grid, vector[0]), ScalarField.constant(grid, vector[1]))


# --- one-dimensional stencils -------------------------------------------------


def first_difference_matrix(n: int, h: float) -> sp.csr_matrix:
    """Central differences inside, second-order one-sided at both ends."""
    if n < 3:
        raise DimensionError(f"first derivative needs at least 3 points, got {n}")
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 3, n - 2, n - 1]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h, 0.5 / h, -2.0 / h, 1.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def second_difference_matrix(n: int, h: float) -> sp.csr_matrix:
    """Three-point stencil inside, four-point one-sided stencil at the ends."""
    if n < 3:
        raise DimensionError(f"second derivative needs at least 3 points, got {n}")
    h2 = h * h
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0 / h2, -2.0 / h2, 1.0 / h2]
    if n >= 4:
        rows += [0] * 4 + [n - 1] * 4
        cols += [0, 1, 2, 3, n - 1, n - 2, n - 3, n - 4]
        vals += [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2] * 2
    else:
        rows += [0] * 3 + [2] * 3
        cols += [0, 1, 2, 0, 1, 2]
        vals += [1.0 / h2, -2.0 / h2, 1.0 / h2] * 2
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _apply_along(matrix: sp.spmatrix, values: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    out = np.asarray(matrix @ flat).reshape(moved.shape)
    return np.moveaxis(out, 0, axis)


# --- array-level operators (axis -1 is x, -2 is y, 0 is t) --------------------


def ddx(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _apply_along(first_difference_matrix(grid.nx, grid.hx), values, -1)


def ddy(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _apply_along(first_difference_matrix(grid.ny, grid.hy), values, -2)


def ddt(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.nt is None or grid.nt < 3:
        raise DimensionError(f"time derivative needs nt >= 3, got {grid.nt}")
    return _apply_along(first_difference_matrix(grid.nt, grid.ht), values, 0)


def laplacian_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.nx < 3 or grid.ny < 3:
        raise DimensionError(f"laplacian needs nx, ny >= 3, got {grid.nx}x{grid.ny}")
    d2x = _apply_along(second_difference_matrix(grid.nx, grid.hx), values, -1)
    d2y = _apply_along(second_difference_matrix(grid.ny, grid.hy), values, -2)
    return d2x + d2y


def divergence_array(values: np.ndarray, qx: np.ndarray, qy: np.ndarray, grid: GridSpec) -> np.ndarray:
    """div(f q) with ``qx``, ``qy`` broadcast against ``values``."""
    return ddx(values * qx, grid) + ddy(values * qy, grid)


def time_integral_array(values: np.ndarray, grid: GridSpec, k0: int) -> np.ndarray:
    """Signed trapezoidal integral from slice ``k0`` to every slice."""
    cumulative = cumulative_trapezoid(values, dx=grid.ht, axis=0, initial=0.0)
    return cumulative - cumulative[k0]


# --- field-level operators ----------------------------------------------------


def laplacian(field: ScalarField) -> ScalarField:
    return ScalarField(field.grid, laplacian_array(field.values, field.grid))


def divergence(field: ScalarField, q: VectorField2) -> ScalarField:
    if q.grid != field.grid.spatial():
        raise DimensionError("velocity field and scalar field live on different grids")
    values = divergence_array(field.values, q.u.values, q.v.values, field.grid)
    return ScalarField(field.grid, values)


def d_dt(field: ScalarField) -> ScalarField:
    return ScalarField(field.grid, ddt(field.values, field.grid))


def time_integral_from_mid(field: ScalarField, t0: float | None = None) -> ScalarField:
    """Integral from ``t0`` (default: mid time) to every grid time."""
    grid = field.grid
    k0 = grid.mid_index if t0 is None else grid.time_index(t0)
    return ScalarField(grid, time_integral_array(field.values, grid, k0))


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    return weights


def quadrature_weights(grid: GridSpec) -> ScalarField:
    """Tensor-product trapezoidal weights; they sum to the measure of the box."""
    weights = np.multiply.outer(_trapezoid_weights(grid.ny, grid.hy), _trapezoid_weights(grid.nx, grid.hx))
    if grid.has_time:
        weights = np.multiply.outer(_trapezoid_weights(grid.nt, grid.ht), weights)
    return ScalarField(grid, weights)


# --- sparse operators on flattened fields -------------------------------------


def axis_operator(grid: GridSpec, axis: str, order: int) -> sp.csr_matrix:
    """Sparse derivative of ``order`` along ``axis`` acting on flattened values."""
    builders = {1: first_difference_matrix, 2: second_difference_matrix}
    if order not in builders:
        raise DimensionError(f"unsupported derivative order {order}")
    counts = {"t": (grid.nt, grid.ht if grid.has_time else None), "y": (grid.ny, grid.hy), "x": (grid.nx, grid.hx)}
    if axis == "t" and not grid.has_time:
        raise DimensionError("time derivative on a spatial grid")
    factors = []
    for name in (["t"] if grid.has_time else []) + ["y", "x"]:
        n, h = counts[name]
        factors.append(builders[order](n, h) if name == axis else sp.identity(n, format="csr"))
    matrix = factors[0]
    for factor in factors[1:]:
        matrix = sp.kron(matrix, factor, format="csr")
    return matrix


# --- boundary bookkeeping -----------------------------------------------------


def boundary_mask(grid: GridSpec) -> np.ndarray:
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def gamma_mask(grid: GridSpec) -> np.ndarray:
    """The face x = x_max, corners included."""
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    mask[:, -1] = True
    return mask


def outward_normals(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normal components at boundary nodes; corners belong to the x-faces."""
    nx_ = np.zeros((grid.ny, grid.nx))
    ny_ = np.zeros((grid.ny, grid.nx))
    ny_[0, :] = -1.0
    ny_[-1, :] = 1.0
    ny_[:, 0] = ny_[:, -1] = 0.0
    nx_[:, 0] = -1.0
    nx_[:, -1] = 1.0
    return nx_, ny_


def normal_derivative_matrix(grid: GridSpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Second-order one-sided outward normal derivative at boundary nodes.

    Returns the operator acting on a flattened spatial field (one row per
    boundary node, in row-major order) and the flat indices of those nodes.
    """
    nx_, ny_ = outward_normals(grid)
    nodes = np.flatnonzero(boundary_mask(grid))
    rows, cols, vals = [], [], []
    for row, node in enumerate(nodes):
        j, i = divmod(int(node), grid.nx)
        if nx_[j, i] != 0.0:
            h, step = grid.hx, -int(nx_[j, i])
        else:
            h, step = grid.hy, -int(ny_[j, i]) * grid.nx
        # (3u0 - 4u1 + u2) / 2h, stepping inward from the boundary node
        for col, coef in zip((node, node + step, node + 2 * step), (1.5, -2.0, 0.5)):
            rows.append(row)
            cols.append(col)
            vals.append(coef / h)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), grid.spatial_size))
    return matrix, nodes


# --- sampling -----------------------------------------------------------------


def sample(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at ``points`` given in storage-axis order."""
    interpolator = RegularGridInterpolator(field.grid.coordinates(), field.values, method="linear",
                                           bounds_error=False, fill_value=None)
    return interpolator(points)


def resample(field: ScalarField, target: GridSpec) -> ScalarField:
    if not field.grid.contains(target):
        raise ConfigurationError("target grid nodes fall outside the source grid hull")
    coords = np.meshgrid(*target.coordinates(), indexing="ij")
    points = np.stack([c.ravel() for c in coords], axis=-1)
    # clip onto the hull to absorb round-off at the edges
    for axis, (lo, hi, _) in enumerate(field.grid.axes()):
        points[:, axis] = np.clip(points[:, axis], lo, hi)
    return ScalarField(target, sample(field, points).reshape(target.shape))


# --- FLD1 files -----------------------------------------------------------------


def write_field(path: str | Path, field: ScalarField) -> Path:
    path = Path(path)
    axes = field.grid.axes()
    header = f"{MAGIC} {len(axes)} " + " ".join(str(n) for _, _, n in axes) + "\n"
    ranges = " ".join(f"{lo!r} {hi!r}" for lo, hi, _ in axes) + "\n"
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    path.write_bytes(header.encode("ascii") + ranges.encode("ascii") + payload)
    return path


def read_field(path: str | Path) -> ScalarField:
    return parse_field(Path(path).read_bytes())


def parse_field(raw: bytes) -> ScalarField:
    first_end = raw.find(b"\n")
    if first_end < 0:
        raise FieldParseError("missing header line", 0)
    second_end = raw.find(b"\n", first_end + 1)
    if second_end < 0:
        raise FieldParseError("missing axis range line", first_end + 1)
    try:
        tokens = raw[:first_end].decode("ascii").split()
        if not tokens or tokens[0] != MAGIC:
            raise ValueError("bad magic")
        ndim = int(tokens[1])
        dims = [int(tok) for tok in tokens[2:]]
        if ndim not in (2, 3) or len(dims) != ndim:
            raise ValueError("bad dimension count")
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise FieldParseError(f"malformed header: {exc}", 0) from exc
    try:
        bounds = [float(tok) for tok in raw[first_end + 1:second_end].decode("ascii").split()]
        if len(bounds) != 2 * ndim:
            raise ValueError("expected a min/max pair per axis")
        axes = [(bounds[2 * a], bounds[2 * a + 1], dims[a]) for a in range(ndim)]
        if ndim == 3:
            (t0, t1, nt), (y0, y1, ny), (x0, x1, nx) = axes
            grid = GridSpec(x0, x1, nx, y0, y1, ny, t0, t1, nt)
        else:
            (y0, y1, ny), (x0, x1, nx) = axes
            grid = GridSpec(x0, x1, nx, y0, y1, ny)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FieldParseError(f"malformed axis ranges: {exc}", first_end + 1) from exc
    start = second_end + 1
    payload = raw[start:]
    expected = grid.size
    if len(payload) != 8 * expected:
        raise FieldParseError(
            f"count mismatch: header declares {expected} values, payload holds {len(payload) / 8:g}",
            start + min(len(payload), 8 * expected),
        )
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FieldParseError("non-finite value", start + 8 * int(bad[0]))
    return ScalarField(grid, values.reshape(grid.shape))


# --- CSV matrices ---------------------------------------------------------------


def write_csv(path: str | Path, matrix: np.ndarray) -> Path:
    """One matrix per file: rows are y ascending, columns x ascending."""
    path = Path(path)
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    return path


def read_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def export_csv_slices(field: ScalarField, out_dir: str | Path, stem: str,
                      slices: Iterable[int] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not field.grid.has_time:
        return [write_csv(out_dir / f"{stem}.csv", field.values)]
    indices = range(field.grid.nt) if slices is None else slices
    return [write_csv(out_dir / f"{stem}_t{k}.csv", field.values[k]) for k in indices]
