import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from epidemic.exceptions import ConfigurationError, DimensionError, EvaluationError, FieldParseError
from epidemic.grid import (
    GridSpec,
    ScalarField,
    VectorField2,
    axis_operator,
    d_dt,
    ddt,
    ddx,
    ddy,
    divergence,
    laplacian,
    normal_derivative_matrix,
    outward_normals,
    parse_field,
    quadrature_weights,
    read_csv,
    read_field,
    resample,
    time_integral_from_mid,
    write_csv,
    write_field,
)

INNER = (slice(1, -1), slice(1, -1))


def observed_order(coarse: float, fine: float) -> float:
    """Convergence order from the errors of two grids whose spacing halves."""
    return float(np.log2(coarse / fine))


class GridSpecTests(SimpleTestCase):
    """Spacing, shape and validation of the grid description."""

    def setUp(self):
        """A 5x3 spatial grid with 11 time levels on [0, 1]."""
        self.grid = GridSpec(1.0, 2.0, 5, -0.5, 0.5, 3, 0.0, 1.0, 11)

    def test_spacing_and_shape(self):
        """Spacings follow from the counts; arrays are stored (t, y, x)."""
        # Assert
        self.assertAlmostEqual(self.grid.hx, 0.25)
        self.assertAlmostEqual(self.grid.hy, 0.5)
        self.assertAlmostEqual(self.grid.ht, 0.1)
        self.assertEqual(self.grid.shape, (11, 3, 5))
        self.assertEqual(self.grid.spatial().shape, (3, 5))
        self.assertEqual(self.grid.mid_index, 5)

    def test_even_time_count_has_no_mid_node(self):
        """An even nt leaves no node at the mid time."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 3, 0.0, 1.0, 3, 0.0, 1.0, 10)

        # Act / Assert
        with self.assertRaises(ConfigurationError):
            grid.mid_index

    def test_time_index_requires_a_node(self):
        """Times between nodes are rejected."""
        # Act / Assert
        self.assertEqual(self.grid.time_index(0.3), 3)
        with self.assertRaises(ConfigurationError):
            self.grid.time_index(0.35)

    def test_rejects_degenerate_axes(self):
        """A single-node axis and a reversed interval are both invalid."""
        # Act / Assert
        with self.assertRaises(DimensionError):
            GridSpec(0.0, 1.0, 1, 0.0, 1.0, 3)
        with self.assertRaises(ConfigurationError):
            GridSpec(1.0, 0.0, 3, 0.0, 1.0, 3)

    def test_field_rejects_non_finite_values(self):
        """The first non-finite entry is reported by index."""
        # Arrange
        values = np.zeros((3, 5))
        values[1, 2] = np.nan

        # Act
        with self.assertRaises(EvaluationError) as ctx:
            ScalarField(self.grid.spatial(), values)

        # Assert
        self.assertEqual(ctx.exception.index, (1, 2))

    def test_dict_round_trip(self):
        """to_dict and from_dict describe the same grid."""
        # Act / Assert
        self.assertEqual(GridSpec.from_dict(self.grid.to_dict()), self.grid)


class DifferenceOperatorTests(SimpleTestCase):
    """Exactness of the difference operators on low-degree polynomials."""

    def setUp(self):
        """A 9x7 spatial grid with 5 time levels."""
        self.grid = GridSpec(0.0, 1.0, 9, -1.0, 1.0, 7, 0.0, 2.0, 5)
        self.X, self.Y, self.T = self.grid.mesh()

    def test_first_derivatives_are_exact_for_quadratics(self):
        """Central and one-sided first differences reproduce quadratics."""
        # Arrange
        u = self.X**2 + 3 * self.X * self.Y + self.Y**2 + self.T**2

        # Act / Assert
        assert_allclose(ddx(u, self.grid), 2 * self.X + 3 * self.Y, atol=1e-10)
        assert_allclose(ddy(u, self.grid), 3 * self.X + 2 * self.Y, atol=1e-10)
        assert_allclose(ddt(u, self.grid), 2 * self.T, atol=1e-10)

    def test_laplacian_is_exact_for_cubics(self):
        """The Laplacian of a cubic is exact up to the boundary."""
        # Arrange
        spatial = self.grid.spatial()
        u = ScalarField.from_function(spatial, lambda x, y: x**3 + y**3 - x * y)
        expected = ScalarField.from_function(spatial, lambda x, y: 6 * x + 6 * y)

        # Act
        result = laplacian(u)

        # Assert
        assert_allclose(result.values, expected.values, atol=1e-9)

    def test_sparse_operator_matches_array_operator(self):
        """The flattened sparse operator agrees with the array operator."""
        # Arrange
        u = np.sin(self.X) * np.cos(self.Y) * (1 + self.T)
        op = axis_operator(self.grid, "x", 1)

        # Act
        result = (op @ u.ravel()).reshape(self.grid.shape)

        # Assert
        assert_allclose(result, ddx(u, self.grid), atol=1e-12)

    def test_quadrature_weights_sum_to_the_box_measure(self):
        """Trapezoid weights integrate one to the box volume."""
        # Act / Assert
        self.assertAlmostEqual(quadrature_weights(self.grid).values.sum(), 1.0 * 2.0 * 2.0)

    def test_time_integral_of_one_is_signed_distance_to_mid(self):
        """Integrating one from the mid time gives t - t_mid."""
        # Arrange
        field = ScalarField.constant(self.grid, 1.0)

        # Act
        integral = time_integral_from_mid(field)

        # Assert
        assert_allclose(integral.values, self.T - 1.0, atol=1e-12)

    def test_time_integral_of_tau_from_the_given_time(self):
        """The trapezoid rule is exact for a linear integrand: int_0.5^1 tau = 0.375."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 3, 0.0, 1.0, 3, 0.0, 1.0, 11)
        field = ScalarField.from_function(grid, lambda x, y, t: t)

        # Act
        integral = time_integral_from_mid(field, t0=0.5)

        # Assert
        assert_allclose(integral.values[-1], 0.375, atol=1e-12)
        assert_allclose(integral.values[5], 0.0, atol=1e-12)

    def test_time_derivative_undoes_the_time_integral(self):
        """d/dt of the integral from the mid time returns the integrand to O(ht^2)."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 3, 0.0, 1.0, 3, 0.0, 1.0, 101)
        field = ScalarField.from_function(grid, lambda x, y, t: np.cos(t) * (1 + x))

        # Act
        recovered = d_dt(time_integral_from_mid(field))

        # Assert
        assert_allclose(recovered.values, field.values, atol=1e-4)

    def test_divergence_of_a_transported_bilinear_field(self):
        """div(f q) for constant q is q . grad f, exact on bilinear f."""
        # Arrange
        field = ScalarField.from_function(self.grid, lambda x, y, t: x * y * (1 + t))
        q = VectorField2.constant(self.grid.spatial(), (1.0, 2.0))

        # Act
        result = divergence(field, q)

        # Assert
        assert_allclose(result.values, (self.Y + 2 * self.X) * (1 + self.T), atol=1e-10)

    def test_divergence_of_x_along_x_is_one(self):
        """f = x carried by q = (1, 0) has unit divergence everywhere."""
        # Arrange
        spatial = self.grid.spatial()
        field = ScalarField.from_function(spatial, lambda x, y: x)
        q = VectorField2.constant(spatial, (1.0, 0.0))

        # Act
        result = divergence(field, q)

        # Assert
        assert_allclose(result.values, 1.0, atol=1e-12)

    def test_divergence_needs_a_matching_velocity_grid(self):
        """A velocity on another grid is a dimension error."""
        # Arrange
        field = ScalarField.constant(self.grid, 1.0)
        q = VectorField2.constant(GridSpec(0.0, 1.0, 5, -1.0, 1.0, 7), (1.0, 0.0))

        # Act / Assert
        with self.assertRaises(DimensionError):
            divergence(field, q)

    def test_time_derivative_field(self):
        """d_dt of x + t^2 is 2t."""
        # Arrange
        field = ScalarField.from_function(self.grid, lambda x, y, t: x + t**2)

        # Act / Assert
        assert_allclose(d_dt(field).values, 2 * self.T, atol=1e-10)

    def test_operators_are_linear(self):
        """op(a f + b g) = a op(f) + b op(g) for random fields and scalars."""
        # Arrange
        rng = np.random.default_rng(3)
        f = ScalarField(self.grid, rng.standard_normal(self.grid.shape))
        g = ScalarField(self.grid, rng.standard_normal(self.grid.shape))
        a, b = rng.uniform(-2.0, 2.0, size=2)
        combined = ScalarField(self.grid, a * f.values + b * g.values)
        q = VectorField2.constant(self.grid.spatial(), (0.3, -0.7))
        operators = {
            "laplacian": laplacian,
            "divergence": lambda u: divergence(u, q),
            "d_dt": d_dt,
            "time_integral": time_integral_from_mid,
        }

        for name, op in operators.items():
            with self.subTest(operator=name):
                # Act
                result = op(combined).values
                expected = a * op(f).values + b * op(g).values

                # Assert
                assert_allclose(result, expected, rtol=1e-10, atol=1e-9)


class ConvergenceOrderTests(SimpleTestCase):
    """Second-order accuracy of the operators on smooth functions under refinement."""

    @staticmethod
    def unit_square(n: int) -> GridSpec:
        return GridSpec(0.0, 1.0, n, 0.0, 1.0, n)

    def laplacian_error(self, n: int) -> float:
        grid = self.unit_square(n)
        field = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        return float(np.max(np.abs(laplacian(field).values + 2 * np.pi**2 * field.values)[INNER]))

    def divergence_error(self, n: int) -> float:
        grid = self.unit_square(n)
        X, Y = grid.mesh()
        field = ScalarField(grid, np.sin(np.pi * X) * np.sin(np.pi * Y))
        q = VectorField2.constant(grid, (1.0, 2.0))
        exact = np.pi * (np.cos(np.pi * X) * np.sin(np.pi * Y) + 2 * np.sin(np.pi * X) * np.cos(np.pi * Y))
        return float(np.max(np.abs(divergence(field, q).values - exact)[INNER]))

    @staticmethod
    def exponential_error(nt: int) -> float:
        grid = GridSpec(0.0, 1.0, 3, 0.0, 1.0, 3, 0.0, 1.0, nt)
        field = ScalarField.from_function(grid, lambda x, y, t: np.exp(t))
        return float(np.max(np.abs(d_dt(field).values - field.values)))

    def test_laplacian_is_second_order(self):
        """Halving h cuts the interior Laplacian error by about four."""
        # Act
        order = observed_order(self.laplacian_error(17), self.laplacian_error(33))

        # Assert
        self.assertGreaterEqual(order, 1.9)

    def test_laplacian_error_on_a_fine_grid_is_within_the_truncation_bound(self):
        """sin(pi x) sin(pi y) on 65x65 stays within 4 (pi^4 / 12) h^2 of -2 pi^2 f."""
        # Arrange
        h = 1.0 / 64

        # Act
        error = self.laplacian_error(65)

        # Assert
        self.assertLessEqual(error, 4 * np.pi**4 / 12 * h**2)

    def test_divergence_is_second_order(self):
        """Halving h cuts the interior divergence error by about four."""
        # Act
        order = observed_order(self.divergence_error(17), self.divergence_error(33))

        # Assert
        self.assertGreaterEqual(order, 1.9)

    def test_time_derivative_of_exponential_is_second_order(self):
        """d_dt e^t on nt = 101 is within e ht^2 / 2, and refining the step halves the order-two error."""
        # Arrange
        ht = 0.01

        # Act
        fine = self.exponential_error(101)
        order = observed_order(self.exponential_error(51), fine)

        # Assert
        self.assertLessEqual(fine, np.e * ht**2 / 2)
        self.assertGreaterEqual(order, 1.9)


class BoundaryTests(SimpleTestCase):
    """Outward normals and the discrete normal derivative."""

    def setUp(self):
        """A 6x5 unit square."""
        self.grid = GridSpec(0.0, 1.0, 6, 0.0, 1.0, 5)

    def test_corners_belong_to_the_x_faces(self):
        """Corner normals point along x; edge nodes along their face normal."""
        # Act
        nx_, ny_ = outward_normals(self.grid)

        # Assert
        self.assertEqual((nx_[0, 0], ny_[0, 0]), (-1.0, 0.0))
        self.assertEqual((nx_[-1, -1], ny_[-1, -1]), (1.0, 0.0))
        self.assertEqual((nx_[0, 2], ny_[0, 2]), (0.0, -1.0))

    def test_normal_derivative_is_exact_for_quadratics(self):
        """The one-sided normal derivative reproduces quadratics at every boundary node."""
        # Arrange
        X, Y = self.grid.mesh()
        u = X**2 + Y
        matrix, nodes = normal_derivative_matrix(self.grid)
        nx_, ny_ = outward_normals(self.grid)
        expected = (nx_ * 2 * X + ny_ * 1.0).ravel()[nodes]

        # Act
        result = matrix @ u.ravel()

        # Assert
        assert_allclose(result, expected, atol=1e-10)
        self.assertEqual(nodes.size, 2 * 6 + 2 * 3)


class ResampleTests(SimpleTestCase):
    """Multilinear restriction between grids."""

    def test_linear_function_is_reproduced(self):
        """Restriction is exact on functions linear in x, y and t."""
        # Arrange
        source = GridSpec(0.0, 2.0, 11, 0.0, 2.0, 9, 0.0, 1.0, 5)
        target = GridSpec(0.5, 1.5, 7, 0.25, 1.75, 4, 0.0, 1.0, 3)
        field = ScalarField.from_function(source, lambda x, y, t: 2 * x - y + 3 * t)
        expected = ScalarField.from_function(target, lambda x, y, t: 2 * x - y + 3 * t)

        # Act
        result = resample(field, target)

        # Assert
        assert_allclose(result.values, expected.values, atol=1e-12)

    def test_target_outside_the_hull_is_rejected(self):
        """A target reaching beyond the source grid is a configuration error."""
        # Arrange
        source = GridSpec(0.0, 1.0, 5, 0.0, 1.0, 5)

        # Act / Assert
        with self.assertRaises(ConfigurationError):
            resample(ScalarField.constant(source, 1.0), GridSpec(0.0, 1.5, 5, 0.0, 1.0, 5))


class FieldFileTests(SimpleTestCase):
    """The binary .fld format and its parse errors."""

    def setUp(self):
        """A scratch directory per test."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_write_then_read_space_time_field(self):
        """A written field reads back with its grid and exact values."""
        # Arrange
        grid = GridSpec(1.0, 2.0, 4, -0.5, 0.5, 3, 0.0, 1.0, 5)
        field = ScalarField.from_function(grid, lambda x, y, t: x * y + t)

        # Act
        loaded = read_field(write_field(self.dir / "u.fld", field))

        # Assert
        self.assertEqual(loaded.grid, grid)
        assert_array_equal(loaded.values, field.values)

    def _raw(self, values: list[float]) -> tuple[bytes, int]:
        head = b"FLD1 2 2 2\n0.0 1.0 0.0 1.0\n"
        return head + np.asarray(values, dtype="<f8").tobytes(), len(head)

    def test_bad_magic_points_at_the_header(self):
        """A wrong magic is reported at offset zero."""
        # Arrange
        raw, _ = self._raw([1.0, 2.0, 3.0, 4.0])

        # Act
        with self.assertRaises(FieldParseError) as ctx:
            parse_field(b"FLD2" + raw[4:])

        # Assert
        self.assertEqual(ctx.exception.offset, 0)

    def test_short_payload_reports_where_data_ends(self):
        """A truncated payload is reported where the data runs out."""
        # Arrange
        raw, start = self._raw([1.0, 2.0, 3.0])

        # Act
        with self.assertRaises(FieldParseError) as ctx:
            parse_field(raw)

        # Assert
        self.assertEqual(ctx.exception.offset, start + 24)

    def test_non_finite_value_reports_its_offset(self):
        """A NaN is reported at its byte offset."""
        # Arrange
        raw, start = self._raw([1.0, 2.0, float("nan"), 4.0])

        # Act
        with self.assertRaises(FieldParseError) as ctx:
            parse_field(raw)

        # Assert
        self.assertEqual(ctx.exception.offset, start + 16)

    def test_malformed_ranges_point_after_the_header(self):
        """A short range line is reported right after the header line."""
        # Act
        with self.assertRaises(FieldParseError) as ctx:
            parse_field(b"FLD1 2 2 2\n0.0 1.0 0.0\n" + bytes(32))

        # Assert
        self.assertEqual(ctx.exception.offset, len(b"FLD1 2 2 2\n"))


class CsvTests(SimpleTestCase):
    """CSV matrices for heat maps."""

    def test_rows_are_y_and_columns_are_x(self):
        """Rows follow y and columns follow x, and the file reads back."""
        with tempfile.TemporaryDirectory() as tmp:
            # Act
            path = write_csv(Path(tmp) / "m.csv", np.array([[1.0, 2.0], [3.0, 4.0]]))

            # Assert
            self.assertEqual(path.read_text().strip(), "1,2\n3,4")
            assert_array_equal(read_csv(path), [[1.0, 2.0], [3.0, 4.0]])
