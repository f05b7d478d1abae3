import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from epidemic.exceptions import ConfigurationError, StabilityError
from epidemic.forward import SirParams, forward_solve, restrict_to_inverse_grid, solve_homogeneous
from epidemic.grid import GridSpec, ScalarField, normal_derivative_matrix
from epidemic.phantoms import Inclusion, PhantomSpec, build_phantom, inside_value, truth_mask
from epidemic.presets import LETTER_BOX


def make_params(grid, beta=0.5, gamma=0.2, rho0=(0.6, 0.8, 0.0), q=(0.0, 0.0), d=0.1, **kwargs):
    spatial = grid.spatial()
    fields = [value if isinstance(value, ScalarField) else ScalarField.constant(spatial, value)
              for value in (beta, gamma, *rho0)]
    return SirParams(d, q, q, q, *fields, **kwargs)


class ForwardSolveTests(SimpleTestCase):
    """The semi-implicit SIR solver against invariants, the ODE and a manufactured solution."""

    def test_constant_state_without_infected_is_stationary(self):
        """With no infected and constant data nothing moves, even under advection."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 9, 0.0, 1.0, 9, 0.0, 1.0, 6)
        params = make_params(grid, rho0=(0.7, 0.0, 0.2), q=(0.2, 0.2))

        # Act
        solution = forward_solve(params, grid, substeps=2)

        # Assert
        for field, value in zip(solution.fields, (0.7, 0.0, 0.2)):
            assert_allclose(field.values, value, atol=1e-12)

    def test_unstable_step_reports_the_admissible_one(self):
        """A step beyond the advective bound fails and names the largest stable step."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 9, 0.0, 1.0, 9, 0.0, 1.0, 5)
        params = make_params(grid, beta=0.0, gamma=0.0, q=(50.0, 0.0), d=5.0)

        # Act
        with self.assertRaises(StabilityError) as ctx:
            forward_solve(params, grid)

        # Assert
        self.assertAlmostEqual(ctx.exception.max_dt, 0.0025)

    def test_substeps_must_be_positive(self):
        """Zero substeps is a configuration error."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 5, 0.0, 1.0, 5, 0.0, 1.0, 3)

        # Act / Assert
        with self.assertRaises(ConfigurationError):
            forward_solve(make_params(grid), grid, substeps=0)

    def test_spatially_constant_run_matches_the_ode(self):
        """Constant coefficients and data reduce the system to the SIR ODE."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 5, 0.0, 1.0, 5, 0.0, 1.0, 11)

        # Act
        solution = forward_solve(make_params(grid), grid, substeps=10)
        reference = solve_homogeneous(0.5, 0.2, (0.6, 0.8, 0.0), grid.t)

        # Assert
        for species, field in enumerate(solution.fields):
            assert_allclose(field.values[:, 2, 2], reference[species], atol=1e-4)
            # no spatial structure may appear
            assert_allclose(field.values, field.values[:, :1, :1] * np.ones(grid.shape), atol=1e-12)

    def test_susceptible_plus_infected_is_conserved_without_recovery(self):
        """Without recovery or transport S + I keeps its initial value pointwise."""
        # Arrange
        grid = GridSpec(0.0, 2.0, 17, -1.0, 1.0, 17, 0.0, 0.5, 11)
        beta = ScalarField.from_function(grid.spatial(), lambda x, y: 0.2 + np.exp(-10 * ((x - 1) ** 2 + y**2)))

        # Act
        solution = forward_solve(make_params(grid, beta=beta, gamma=0.0, d=0.01), grid, substeps=2)

        # Assert
        assert_allclose(solution.rho_S.values + solution.rho_I.values, 1.4, atol=1e-10)
        assert_allclose(solution.rho_R.values, 0.0, atol=1e-12)

    def test_manufactured_steady_state_converges_at_second_order(self):
        """A sourced steady state is held with an error that drops at second order in h."""
        # Arrange
        errors = []
        for n in (17, 33):
            grid = GridSpec(0.0, 1.0, n, 0.0, 1.0, n, 0.0, 0.5, 51)
            X, Y = grid.spatial().mesh()
            shape = np.cos(np.pi * X) * np.cos(np.pi * Y)
            source = 2 * np.pi**2 * 0.1 * shape
            u0 = ScalarField(grid.spatial(), 1.0 + shape)
            params = make_params(grid, beta=0.0, gamma=0.0, rho0=(u0, u0, u0),
                                 source=lambda t, f=source: (f, f, f))

            # Act
            solution = forward_solve(params, grid)
            errors.append(np.max(np.abs(solution.rho_S.values[-1] - u0.values)))

        # Assert
        self.assertGreater(np.log2(errors[0] / errors[1]), 1.5)

    def test_prescribed_boundary_flux_is_honoured(self):
        """The discrete normal derivative equals the prescribed flux at the final time."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 9, 0.0, 1.0, 9, 0.0, 0.5, 6)

        def flux(species, bx, by, t):
            return np.full_like(bx, 0.3 if species == 0 else 0.0)

        # Act
        solution = forward_solve(make_params(grid, flux=flux), grid)

        # Assert
        matrix, _ = normal_derivative_matrix(grid.spatial())
        assert_allclose(matrix @ solution.rho_S.values[-1].ravel(), 0.3, atol=1e-9)
        assert_allclose(matrix @ solution.rho_I.values[-1].ravel(), 0.0, atol=1e-9)

    def test_letter_scenario_stays_bounded(self):
        """The letter phantoms with transport keep the populations bounded."""
        # Arrange
        grid = GridSpec(0.45, 2.55, 33, -1.05, 1.05, 33, 0.0, 1.0, 21)
        phantom = PhantomSpec(0.1, 0.1, (1.0, 2.0, -0.5, 0.5), (
            Inclusion("gamma", "A", tuple(LETTER_BOX), 0.4),
            Inclusion("beta", "M", tuple(LETTER_BOX), 0.6),
        ))
        beta, gamma = build_phantom(phantom, grid)

        # Act
        solution = forward_solve(make_params(grid, beta=beta, gamma=gamma, q=(0.2, 0.2)), grid)

        # Assert
        for field in solution.fields:
            self.assertGreater(field.values.min(), -1e-3)
            self.assertLess(field.values.max(), 1.5)

    def test_restriction_needs_a_covered_inverse_grid(self):
        """Restriction is exact on constants and refuses grids the run does not cover."""
        # Arrange
        grid = GridSpec(0.0, 1.0, 5, 0.0, 1.0, 5, 0.0, 1.0, 3)
        solution = forward_solve(make_params(grid, rho0=(0.5, 0.0, 0.0)), grid)

        # Act
        restricted = restrict_to_inverse_grid(solution, GridSpec(0.25, 0.75, 3, 0.25, 0.75, 3, 0.0, 1.0, 3))

        # Assert
        assert_allclose(restricted.rho_S.values, 0.5, atol=1e-12)
        with self.assertRaises(ConfigurationError):
            restrict_to_inverse_grid(solution, GridSpec(0.5, 1.5, 3, 0.0, 1.0, 3, 0.0, 1.0, 3))


class PhantomTests(SimpleTestCase):
    """Rasterized inclusions and their validation."""

    def setUp(self):
        """An 11x11 unit square, h = 0.1."""
        self.grid = GridSpec(0.0, 1.0, 11, 0.0, 1.0, 11)

    def test_rectangle_covers_its_box(self):
        """A rectangle sets its target inside the box and leaves the other coefficient alone."""
        # Arrange
        spec = PhantomSpec(0.1, 0.2, (0.2, 0.8, 0.2, 0.8), (Inclusion("beta", "rect", (0.3, 0.7, 0.3, 0.7), 2.0),))

        # Act
        beta, gamma = build_phantom(spec, self.grid)

        # Assert
        self.assertEqual(beta.values[5, 5], 2.0)
        self.assertEqual(beta.values[0, 0], 0.1)
        assert_allclose(gamma.values, 0.2)

    def test_later_inclusion_wins_where_two_overlap(self):
        """Overlapping inclusions on one target take the value listed last."""
        # Arrange
        first = Inclusion("beta", "rect", (0.2, 0.6, 0.2, 0.6), 1.0)
        second = Inclusion("beta", "rect", (0.4, 0.8, 0.4, 0.8), 3.0)
        forward = PhantomSpec(0.1, 0.1, (0.1, 0.9, 0.1, 0.9), (first, second))
        backward = PhantomSpec(0.1, 0.1, (0.1, 0.9, 0.1, 0.9), (second, first))

        # Act
        beta_forward, _ = build_phantom(forward, self.grid)
        beta_backward, _ = build_phantom(backward, self.grid)

        # Assert
        self.assertEqual(beta_forward.values[5, 5], 3.0)
        self.assertEqual(beta_backward.values[5, 5], 1.0)
        for beta in (beta_forward, beta_backward):
            self.assertEqual(beta.values[3, 3], 1.0)
            self.assertEqual(beta.values[7, 7], 3.0)
            self.assertEqual(beta.values[0, 0], 0.1)
        self.assertEqual(inside_value(forward, "beta"), 3.0)
        self.assertTrue(truth_mask(forward, self.grid, "beta")[3, 3])
        self.assertTrue(truth_mask(forward, self.grid, "beta")[7, 7])

    def test_letter_mask_is_a_proper_subset_of_its_box(self):
        """A letter covers part of its box and nothing outside it."""
        # Arrange
        grid = GridSpec(1.0, 2.0, 65, -0.5, 0.5, 65)
        spec = PhantomSpec(0.1, 0.1, (1.0, 2.0, -0.5, 0.5), (Inclusion("gamma", "A", tuple(LETTER_BOX), 0.4),))
        X, Y = grid.mesh()
        x0, x1, y0, y1 = LETTER_BOX
        in_box = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)

        # Act
        mask = truth_mask(spec, grid, "gamma")

        # Assert
        self.assertGreater(mask.sum(), 0)
        self.assertLess(mask.sum(), in_box.sum())
        self.assertFalse(np.any(mask & ~in_box))
        self.assertIsNone(truth_mask(spec, grid, "beta"))

    def test_inclusion_outside_the_measurement_domain_is_rejected(self):
        """A box sticking out of the measurement domain is a configuration error."""
        # Arrange
        spec = PhantomSpec(0.1, 0.1, (0.2, 0.8, 0.2, 0.8), (Inclusion("beta", "rect", (0.1, 0.5, 0.3, 0.5), 1.0),))

        # Act / Assert
        with self.assertRaises(ConfigurationError):
            build_phantom(spec, self.grid)

    def test_measurement_domain_must_fit_the_grid(self):
        """The measurement domain has to lie inside the simulation grid."""
        # Act / Assert
        with self.assertRaises(ConfigurationError):
            build_phantom(PhantomSpec(0.1, 0.1, (0.5, 1.5, 0.2, 0.8)), self.grid)

    def test_inclusion_fields_are_validated(self):
        """Unknown targets and shapes and non-positive values are rejected."""
        # Act / Assert
        with self.assertRaises(ConfigurationError):
            Inclusion("delta", "rect", (0.0, 1.0, 0.0, 1.0), 1.0)
        with self.assertRaises(ConfigurationError):
            Inclusion("beta", "Z", (0.0, 1.0, 0.0, 1.0), 1.0)
        with self.assertRaises(ConfigurationError):
            Inclusion("beta", "rect", (0.0, 1.0, 0.0, 1.0), 0.0)

    def test_spec_survives_a_manifest_round_trip(self):
        """to_dict and from_dict describe the same phantom."""
        # Arrange
        spec = PhantomSpec(0.1, 0.1, (1.0, 2.0, -0.5, 0.5), (Inclusion("beta", "B", (1.2, 1.8, -0.3, 0.3), 0.6),))

        # Act / Assert
        self.assertEqual(PhantomSpec.from_dict(spec.to_dict()), spec)
