"""Carleman-weighted quasi-reversibility and the contraction-mapping outer loop.

The unknown is W = (v1, v2, v3, v1_t, v2_t, v3_t) with v_j the time
derivative of population j. Each outer iteration minimizes

    J(W) = sum c^2 [ |L W + Y(W_prev)|^2 + kappa_N^2 |dn W - G1|^2 + xi |W|^2_H2 ]

with c^2 = quadrature weight * normalized Carleman weight at each node and
W = G0 imposed on the face x = x_max. Y is frozen at the previous
iterate, so every step is a linear least-squares problem and the system
matrix never changes between iterations.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, lsqr, splu

from .carleman import CarlemanWeight
from .exceptions import AssemblyError, ConfigurationError, ConvergenceError, EvaluationError, StepSizeError
from .grid import (
    GridSpec,
    ScalarField,
    axis_operator,
    boundary_mask,
    ddt,
    gamma_mask,
    normal_derivative_matrix,
    quadrature_weights,
    time_integral_array,
)
from .observation import DerivedData, SCoefficients

logger = logging.getLogger(__name__)

N_COMPONENTS = 6
# velocity index (S, I, R) carried by each component
COMPONENT_VELOCITY = (0, 1, 2, 0, 1, 2)
LS_METHODS = ("direct", "cg", "lsqr")
# Neumann rows relative to the PDE rows at the same node
DEFAULT_KAPPA_N = 1e2
REGULARIZATION_TERMS = (("t", 0), ("x", 1), ("y", 1), ("t", 1), ("x", 2), ("y", 2), ("t", 2))


@dataclass(frozen=True)
class InverseConfig:
    lam: float = 5.0
    xi: float = 1e-2
    kappa_n: float | None = None
    kappa_c: float = 0.0
    reg_order: int = 2
    stop_tol: float = 1e-5
    max_iter: int = 10
    ls_method: str = "direct"
    ls_tol: float = 1e-10
    ls_max_iter: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be non-negative, got {self.lam}")
        if not self.xi > 0:
            raise ConfigurationError(f"xi must be positive, got {self.xi}")
        if not self.stop_tol > 0:
            raise ConfigurationError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.kappa_n is not None and not self.kappa_n > 0:
            raise ConfigurationError(f"kappa_n must be positive, got {self.kappa_n}")
        if self.kappa_c < 0:
            raise ConfigurationError(f"kappa_c must be non-negative, got {self.kappa_c}")
        if self.reg_order != 2:
            raise ConfigurationError("only the H2 regularization (reg_order=2) is available")
        if self.ls_method not in LS_METHODS:
            raise ConfigurationError(f"ls_method must be one of {LS_METHODS}, got {self.ls_method!r}")
        if self.max_iter < 0 or self.ls_max_iter < 1:
            raise ConfigurationError("iteration caps must be positive")


@dataclass(frozen=True, eq=False)
class WField:
    """Six components on one space-time grid, stored as shape (6, nt, ny, nx)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape((N_COMPONENTS,) + self.grid.shape)
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            raise EvaluationError("non-finite W value", tuple(int(i) for i in bad[0]))
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "WField":
        return cls(grid, np.zeros((N_COMPONENTS,) + grid.shape))

    @classmethod
    def from_components(cls, components: Sequence[ScalarField]) -> "WField":
        grid = components[0].grid
        if len(components) != N_COMPONENTS or any(c.grid != grid for c in components):
            raise ConfigurationError("a W field needs six components on one grid")
        return cls(grid, np.stack([c.values for c in components]))

    @property
    def components(self) -> list[ScalarField]:
        return [ScalarField(self.grid, v) for v in self.values]

    def vector(self) -> np.ndarray:
        return self.values.ravel()

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def compat_defect(self) -> float:
        """RMS of d/dt w_j - w_{j+3}, j = 1..3."""
        defects = [ddt(self.values[j], self.grid) - self.values[j + 3] for j in range(3)]
        return float(np.sqrt(np.mean(np.square(defects))))


# --- continuous pieces -----------------------------------------------------------


def component_operator(grid: GridSpec, d: float, qx: np.ndarray, qy: np.ndarray) -> sp.csr_matrix:
    """d/dt - d lap + div(. q) on flattened space-time values."""
    qx_full = sp.diags(np.broadcast_to(qx, grid.shape).ravel())
    qy_full = sp.diags(np.broadcast_to(qy, grid.shape).ravel())
    return (
        axis_operator(grid, "t", 1)
        - d * (axis_operator(grid, "x", 2) + axis_operator(grid, "y", 2))
        + axis_operator(grid, "x", 1) @ qx_full
        + axis_operator(grid, "y", 1) @ qy_full
    ).tocsr()


def interior_rows(grid: GridSpec) -> np.ndarray:
    """Flat indices of space-time nodes that are interior in space (every time)."""
    interior = ~boundary_mask(grid.spatial())
    return np.flatnonzero(np.broadcast_to(interior, grid.shape))


def assemble_L(grid: GridSpec, transport, rows: str = "interior") -> list[sp.csr_matrix]:
    """The six component operators, restricted to spatially interior rows by default."""
    velocities = transport.arrays(grid.spatial())
    keep = interior_rows(grid) if rows == "interior" else np.arange(grid.size)
    operators = []
    for c in range(N_COMPONENTS):
        qx, qy = velocities[COMPONENT_VELOCITY[c]]
        operators.append(component_operator(grid, transport.d, qx, qy)[keep])
    return operators


def apply_L(w: WField, transport) -> np.ndarray:
    """L(W) at every node, shape (6, nt, ny, nx)."""
    operators = assemble_L(w.grid, transport, rows="all")
    return np.stack([op @ w.values[c].ravel() for c, op in enumerate(operators)]).reshape(w.values.shape)


def coefficient_maps(w: WField, s: SCoefficients) -> tuple[np.ndarray, np.ndarray]:
    """B(x, t) and Gamma(x, t): the infection and recovery rates implied by W at every time."""
    grid = w.grid
    mid = grid.mid_index
    i4 = time_integral_array(w.values[3], grid, mid)
    i6 = time_integral_array(w.values[5], grid, mid)
    B = (w.values[0] - i4) * s.s1.values + s.s2.values
    G = (w.values[2] - i6) * s.s3.values + s.s4.values
    return B, G


def eval_Y(w_prev: WField, s: SCoefficients, p1: ScalarField, p2: ScalarField) -> np.ndarray:
    """Frozen nonlinearity, shape (6, nt, ny, nx)."""
    grid = w_prev.grid
    w = w_prev.values
    mid = grid.mid_index
    with np.errstate(all="ignore"):
        i1 = time_integral_array(w[0], grid, mid) + p1.values
        i2 = time_integral_array(w[1], grid, mid) + p2.values
        B, G = coefficient_maps(w_prev, s)
        y1 = B * (w[0] * i2 + i1 * w[1])
        y3 = -G * w[1]
        y4 = B * (w[3] * i2 + 2.0 * w[0] * w[1] + i1 * w[4])
        y6 = -G * w[4]
        Y = np.stack([y1, -y1, y3, y4, -y4, y6])
    bad = np.argwhere(~np.isfinite(Y))
    if bad.size:
        raise EvaluationError("non-finite nonlinearity", tuple(int(i) for i in bad[0]))
    return Y


def weighted_norm(values: np.ndarray, grid: GridSpec, lam: float) -> float:
    """sqrt(sum over components of int v^2 phi) with the normalized Carleman weight."""
    phi = CarlemanWeight(lam, grid.x_max, grid.t_max - grid.t_min).on_grid(grid)
    qw = quadrature_weights(grid).values
    return float(np.sqrt(np.sum(values.reshape((-1,) + grid.shape) ** 2 * (phi * qw))))


# --- sparse least squares ----------------------------------------------------------


@dataclass(frozen=True)
class Block:
    """Rows and unknowns that decouple from the rest of the system."""

    rows: slice
    columns: np.ndarray
    key: str | None = None


@dataclass(eq=False)
class SparseLS:
    """min sum (weights * (matrix @ w - rhs))^2 with w[fixed_index] = fixed_values."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    weights: np.ndarray
    fixed_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    blocks: list[Block] | None = None
    grid: GridSpec | None = None

    def __post_init__(self) -> None:
        self.matrix = sp.csr_matrix(self.matrix)
        n_rows, n_cols = self.matrix.shape
        if self.rhs.shape != (n_rows,) or self.weights.shape != (n_rows,):
            raise AssemblyError("rhs and weights must have one entry per row")
        if np.any(self.weights <= 0):
            raise AssemblyError("row weights must be positive")
        if self.fixed_index.shape != self.fixed_values.shape:
            raise AssemblyError("fixed indices and values differ in length")
        if self.blocks is None:
            self.blocks = [Block(slice(0, n_rows), np.arange(n_cols))]

    @property
    def n_total(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_unknowns(self) -> int:
        return self.n_total - self.fixed_index.size

    @cached_property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_total, dtype=bool)
        mask[self.fixed_index] = False
        return mask

    @cached_property
    def weighted_matrix(self) -> sp.csr_matrix:
        return (sp.diags(self.weights) @ self.matrix).tocsr()

    def residual(self, w: np.ndarray) -> np.ndarray:
        return self.weights * (self.matrix @ w - self.rhs)

    def value(self, w: np.ndarray) -> float:
        r = self.residual(w)
        return float(r @ r)

    def group_value(self, w: np.ndarray, group: str, homogeneous: bool = False) -> float:
        """Contribution of one row group; ``homogeneous`` drops the right-hand side."""
        rows = self.groups[group]
        r = self.weighted_matrix[rows] @ w
        if not homogeneous:
            r = r - self.weights[rows] * self.rhs[rows]
        return float(r @ r)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Gradient of the functional in the free unknowns (zero on fixed entries)."""
        g = 2.0 * (self.weighted_matrix.T @ self.residual(w))
        g[~self.free_mask] = 0.0
        return g

    def embed(self, free_values: np.ndarray) -> np.ndarray:
        w = np.zeros(self.n_total)
        w[self.free_mask] = free_values
        w[self.fixed_index] = self.fixed_values
        return w

    def block_system(self, block: Block) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Weighted reduced matrix, rhs with fixed values folded in, free column indices."""
        rows = self.weighted_matrix[block.rows]
        free = block.columns[self.free_mask[block.columns]]
        fixed = block.columns[~self.free_mask[block.columns]]
        fixed_full = np.zeros(self.n_total)
        fixed_full[self.fixed_index] = self.fixed_values
        rhs = self.weights[block.rows] * self.rhs[block.rows]
        if fixed.size:
            rhs = rhs - rows[:, fixed] @ fixed_full[fixed]
        return rows[:, free].tocsr(), rhs, free

    def min_rayleigh_quotient(self, samples: int = 20, seed: int = 0) -> float:
        """Smallest sampled h.(A^T A)h / h.h over random free directions."""
        rng = np.random.default_rng(seed)
        reduced = self.weighted_matrix[:, np.flatnonzero(self.free_mask)]
        quotients = []
        for _ in range(samples):
            h = rng.standard_normal(self.n_unknowns)
            Ah = reduced @ h
            quotients.append(float(Ah @ Ah) / float(h @ h))
        return min(quotients)


def _matrix_key(matrix: sp.csr_matrix) -> str:
    digest = hashlib.sha1()
    for part in (matrix.indptr, matrix.indices, matrix.data):
        digest.update(np.ascontiguousarray(part).tobytes())
    digest.update(str(matrix.shape).encode())
    return digest.hexdigest()


def _column_scale(matrix: sp.spmatrix) -> np.ndarray:
    """1 / column norm; columns the Carleman weight makes tiny come back to order one."""
    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=0)).ravel())
    return 1.0 / np.where(norms > 0, norms, 1.0)


def _scaled_factorization(normal: sp.csc_matrix) -> Callable[[np.ndarray], np.ndarray]:
    """LU of D N D with D = diag(N)^(-1/2), returned as a solver for N itself."""
    diagonal = normal.diagonal()
    scale = 1.0 / np.sqrt(np.where(diagonal > 0, diagonal, 1.0))
    D = sp.diags(scale)
    solve = splu((D @ normal @ D).tocsc()).solve
    return lambda rhs: scale * solve(scale * rhs)


class QrmSolver:
    """Least-squares back-ends; direct factorizations are cached by block matrix."""

    def __init__(self, config: InverseConfig) -> None:
        self.config = config
        self._factorizations: dict[str, Callable[[np.ndarray], np.ndarray]] = {}
        self.residual_history: list[float] = []

    def solve(self, system: SparseLS, x0: np.ndarray | None = None) -> np.ndarray:
        w = np.zeros(system.n_total)
        w[system.fixed_index] = system.fixed_values
        for block in system.blocks:
            matrix, rhs, free = system.block_system(block)
            if free.size == 0:
                continue
            start = None if x0 is None else x0[free]
            w[free] = self._solve_block(matrix, rhs, block.key, start)
        return w

    def _solve_block(self, matrix: sp.csr_matrix, rhs: np.ndarray, key: str | None,
                     x0: np.ndarray | None) -> np.ndarray:
        method = self.config.ls_method
        if method == "lsqr":
            return self._lsqr(matrix, rhs, x0)
        normal = (matrix.T @ matrix).tocsc()
        normal_rhs = matrix.T @ rhs
        if method == "cg":
            return self._cg(normal, normal_rhs, x0)
        key = key or _matrix_key(matrix)
        if key not in self._factorizations:
            logger.debug("factorizing normal matrix of size %d", normal.shape[0])
            self._factorizations[key] = _scaled_factorization(normal)
        return self._factorizations[key](normal_rhs)

    def _cg(self, normal: sp.csc_matrix, rhs: np.ndarray, x0: np.ndarray | None) -> np.ndarray:
        diagonal = normal.diagonal()
        preconditioner = sp.diags(1.0 / np.where(diagonal > 0, diagonal, 1.0))
        scale = float(np.linalg.norm(rhs)) or 1.0
        residuals: list[float] = []

        def record(xk: np.ndarray) -> None:
            residuals.append(float(np.linalg.norm(rhs - normal @ xk)) / scale)

        x, info = cg(normal, rhs, x0=x0, rtol=self.config.ls_tol, maxiter=self.config.ls_max_iter,
                     M=preconditioner, callback=record)
        self.residual_history.extend(residuals)
        if info > 0:
            logger.error("conjugate gradients stopped at the cap of %d iterations", self.config.ls_max_iter)
            raise ConvergenceError(f"CG did not reach rtol {self.config.ls_tol} in {info} iterations", residuals)
        return x

    def _lsqr(self, matrix: sp.csr_matrix, rhs: np.ndarray, x0: np.ndarray | None) -> np.ndarray:
        scale = _column_scale(matrix)
        start = None if x0 is None else x0 / scale
        result = lsqr(matrix @ sp.diags(scale), rhs, atol=self.config.ls_tol, btol=self.config.ls_tol,
                      iter_lim=self.config.ls_max_iter, x0=start)
        x, istop, itn, r1norm = scale * result[0], result[1], result[2], result[3]
        self.residual_history.append(float(r1norm))
        if istop == 7:
            logger.error("LSQR stopped at the cap of %d iterations", itn)
            raise ConvergenceError(f"LSQR did not converge in {itn} iterations", [float(r1norm)])
        return x


# --- the functional ------------------------------------------------------------------


def _check_data(data: DerivedData) -> GridSpec:
    grid = data.grid
    if grid is None or not grid.has_time:
        raise AssemblyError("derived data carry no space-time grid")
    n_gamma = int(gamma_mask(grid.spatial()).sum())
    n_boundary = int(boundary_mask(grid.spatial()).sum())
    if data.G0 is None or data.G0.shape != (N_COMPONENTS, grid.nt, n_gamma):
        raise AssemblyError(f"G0 must have shape {(N_COMPONENTS, grid.nt, n_gamma)}")
    if data.G1 is None or data.G1.shape != (N_COMPONENTS, grid.nt, n_boundary):
        raise AssemblyError(f"G1 must have shape {(N_COMPONENTS, grid.nt, n_boundary)}")
    if data.s is None or any(s.grid != grid.spatial() for s in data.s.as_tuple()):
        raise AssemblyError("s-coefficients are missing or live on another grid")
    return grid


class FunctionalAssembler:
    """Builds the weighted rows once; only the right-hand side follows W_prev."""

    def __init__(self, data: DerivedData, config: InverseConfig) -> None:
        self.data = data
        self.config = config
        self.grid = grid = _check_data(data)
        n = grid.size
        qw = quadrature_weights(grid).values.ravel()
        phi = CarlemanWeight(config.lam, grid.x_max, grid.t_max - grid.t_min).on_grid(grid).ravel()
        # every row group shares the node scale, so xi and kappa_N are ratios to the PDE rows
        self.node_scale = node_scale = np.sqrt(qw * phi)
        self.interior = interior_rows(grid)
        pde_weights = node_scale[self.interior]
        self.kappa_n = kappa_n = config.kappa_n if config.kappa_n is not None else DEFAULT_KAPPA_N

        operators = assemble_L(grid, data.transport)
        neumann_spatial, _ = normal_derivative_matrix(grid.spatial())
        neumann = sp.kron(sp.identity(grid.nt), neumann_spatial, format="csr")
        boundary = np.flatnonzero(np.broadcast_to(boundary_mask(grid.spatial()), grid.shape))
        neumann_weight = kappa_n * node_scale[boundary]
        regularizers = [
            sp.identity(n, format="csr") if order == 0 else axis_operator(grid, axis, order)
            for axis, order in REGULARIZATION_TERMS
        ]
        reg_weight = np.sqrt(config.xi) * node_scale
        compat_weight = np.sqrt(config.kappa_c) * node_scale
        dt = axis_operator(grid, "t", 1)

        if config.kappa_c > 0:
            layout = [(0, 3), (1, 4), (2, 5)]
        else:
            layout = [(c,) for c in range(N_COMPONENTS)]

        row_blocks: list[list[sp.spmatrix | None]] = []
        weights: list[np.ndarray] = []
        labels: list[tuple[str, int, int]] = []  # (group, component, count)
        block_rows: list[tuple[int, int, tuple[int, ...]]] = []
        cursor = 0

        def emit(group: str, component: int, entries: dict[int, sp.spmatrix], w: np.ndarray) -> None:
            nonlocal cursor
            row = [None] * N_COMPONENTS
            for c, op in entries.items():
                row[c] = op
            row_blocks.append(row)
            weights.append(w)
            labels.append((group, component, w.size))
            cursor += w.size

        for comps in layout:
            start = cursor
            for c in comps:
                emit("pde", c, {c: operators[c]}, pde_weights)
                emit("neumann", c, {c: neumann}, neumann_weight)
                for op in regularizers:
                    emit("regularization", c, {c: op}, reg_weight)
            if config.kappa_c > 0:
                j, k = comps
                emit("compat", j, {j: dt, k: -sp.identity(n, format="csr")}, compat_weight)
            block_rows.append((start, cursor, comps))

        self.matrix = sp.bmat(row_blocks, format="csr")
        self.weights = np.concatenate(weights)
        if np.any(self.weights <= 0):
            raise AssemblyError("non-positive row weight; lambda too large for the grid")
        self.labels = labels
        self.groups: dict[str, list[int]] = {}
        offset = 0
        for group, _c, count in labels:
            self.groups.setdefault(group, []).extend(range(offset, offset + count))
            offset += count

        gamma_flat = np.flatnonzero(np.broadcast_to(gamma_mask(grid.spatial()), grid.shape))
        self.fixed_index = np.concatenate([c * n + gamma_flat for c in range(N_COMPONENTS)])
        self.fixed_values = data.G0.reshape(N_COMPONENTS, -1).ravel()

        template = SparseLS(self.matrix, np.zeros(self.matrix.shape[0]), self.weights,
                            self.fixed_index, self.fixed_values)
        self.blocks = []
        for start, stop, comps in block_rows:
            columns = np.concatenate([np.arange(c * n, (c + 1) * n) for c in comps])
            block = Block(slice(start, stop), columns)
            reduced, _, _ = template.block_system(block)
            self.blocks.append(Block(block.rows, columns, _matrix_key(reduced)))
        logger.debug("assembled %d rows over %d unknowns in %d blocks (%d distinct)",
                     self.matrix.shape[0], template.n_unknowns, len(self.blocks),
                     len({b.key for b in self.blocks}))

    def rhs(self, w_prev: WField | None) -> np.ndarray:
        Y = None
        if w_prev is not None:
            Y = eval_Y(w_prev, self.data.s, self.data.p1, self.data.p2).reshape(N_COMPONENTS, -1)
        parts = []
        for group, c, count in self.labels:
            if group == "pde":
                parts.append(np.zeros(count) if Y is None else -Y[c][self.interior])
            elif group == "neumann":
                parts.append(self.data.G1[c].ravel())
            else:
                parts.append(np.zeros(count))
        rhs = np.concatenate(parts)
        if rhs.size != self.matrix.shape[0]:
            raise AssemblyError("right-hand side does not match the assembled rows")
        return rhs

    def system(self, w_prev: WField | None = None) -> SparseLS:
        return SparseLS(
            self.matrix,
            self.rhs(w_prev),
            self.weights,
            self.fixed_index,
            self.fixed_values,
            groups={k: np.asarray(v) for k, v in self.groups.items()},
            blocks=self.blocks,
            grid=self.grid,
        )


def assemble_functional(w_prev: WField | None, data: DerivedData, config: InverseConfig) -> SparseLS:
    """Weighted least-squares system of one outer iteration; ``w_prev=None`` omits the nonlinearity."""
    return FunctionalAssembler(data, config).system(w_prev)


def solve_qrm_step(system: SparseLS, config: InverseConfig, solver: QrmSolver | None = None,
                   x0: np.ndarray | None = None) -> WField | np.ndarray:
    """Minimize one assembled functional; returns a WField when the system carries a grid."""
    solver = solver or QrmSolver(config)
    w = solver.solve(system, x0)
    if system.grid is None:
        return w
    return WField(system.grid, w)


# --- outer loop -------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    step_norm: float
    functional: float
    compat_defect: float
    w_norm: float
    beta_tvar: float
    gamma_tvar: float
    error_norm: float | None = None

    def as_row(self) -> dict[str, float | int | None]:
        return dict(self.__dict__)


class History(list):
    """Iteration records plus the convergence flag of the run."""

    converged: bool = False


def _record(iteration: int, w: WField, previous: WField | None, system: SparseLS, data: DerivedData,
            config: InverseConfig, reference: WField | None) -> IterationRecord:
    B, G = coefficient_maps(w, data.s)
    step = w.rms() if previous is None else float(np.sqrt(np.mean((w.values - previous.values) ** 2)))
    error = None
    if reference is not None:
        error = weighted_norm(w.values - reference.values, w.grid, config.lam)
    return IterationRecord(
        iteration=iteration,
        step_norm=step,
        functional=system.value(w.vector()),
        compat_defect=w.compat_defect(),
        w_norm=w.rms(),
        beta_tvar=float(np.mean(np.var(B, axis=0))),
        gamma_tvar=float(np.mean(np.var(G, axis=0))),
        error_norm=error,
    )


def ccmm_iterate(data: DerivedData, config: InverseConfig, reference: WField | None = None,
                 callback: Callable[[IterationRecord], None] | None = None) -> tuple[WField, History]:
    """Run the contraction-mapping iterations until the step norm drops below ``stop_tol``."""
    assembler = FunctionalAssembler(data, config)
    solver = QrmSolver(config)
    history = History()

    system = assembler.system(None)
    w = WField(assembler.grid, solver.solve(system))
    history.append(_record(0, w, None, system, data, config, reference))

    growing = 0
    for n in range(1, config.max_iter + 1):
        previous = w
        system = assembler.system(previous)
        w = WField(assembler.grid, solver.solve(system, x0=previous.vector()))
        record = _record(n, w, previous, system, data, config, reference)
        history.append(record)
        logger.info(
            "iteration %d: step %.3e, J %.4e, compat %.3e, |W| %.3e, tvar(B) %.3e, tvar(G) %.3e",
            n, record.step_norm, record.functional, record.compat_defect, record.w_norm,
            record.beta_tvar, record.gamma_tvar,
        )
        if callback is not None:
            callback(record)
        if record.step_norm < config.stop_tol:
            history.converged = True
            break
        growing = growing + 1 if record.step_norm >= history[-2].step_norm else 0
        if growing == 3:
            logger.warning("step norms have not decreased for 3 consecutive iterations (stagnation)")
    else:
        logger.warning("stopped at the iteration cap of %d without reaching %.1e", config.max_iter, config.stop_tol)
    return w, history


# --- gradient descent -------------------------------------------------------------------


def descend(system: SparseLS, step: float, iters: int, w0: np.ndarray | None = None) -> tuple[np.ndarray, list[float]]:
    """Plain gradient descent on an assembled functional; fixed entries stay put."""
    if not step > 0:
        raise ConfigurationError(f"step size must be positive, got {step}")
    w = system.embed(np.zeros(system.n_unknowns)) if w0 is None else w0.copy()
    w[system.fixed_index] = system.fixed_values
    trace = [system.value(w)]
    for k in range(iters):
        w = w - step * system.gradient(w)
        value = system.value(w)
        if not np.isfinite(value) or value > trace[-1] * (1 + 1e-12) + 1e-300:
            raise StepSizeError(f"functional increased at descent step {k + 1}", step / 2)
        trace.append(value)
    return w, trace


def gradient_descent_minimize(data: DerivedData, config: InverseConfig, step: float, iters: int,
                              w_prev: WField | None = None) -> tuple[WField, list[float]]:
    system = assemble_functional(w_prev, data, config)
    w, trace = descend(system, step, iters)
    return WField(system.grid, w), trace
