"""Full-scale runs of the letter scenarios; enable with EPIDEMIC_SLOW_TESTS=1."""
import tempfile
import unittest
from pathlib import Path

from django.conf import settings
from django.test import TestCase

from epidemic.services import PipelineService, load_config

slow = unittest.skipUnless(settings.EPIDEMIC["SLOW_TESTS"], "set EPIDEMIC_SLOW_TESTS=1 to run full-scale scenarios")


@slow
class LetterScenarioTests(TestCase):
    """The A-M scenario on the reference grids."""

    def setUp(self):
        """A scratch run root per test."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def pipeline(self, out, **overrides):
        config = load_config(preset="A-M", overrides={"seed": 0, **overrides})
        return PipelineService(config, self.root / out)

    def run_chain(self, pipeline, delta=None):
        forward = pipeline.forward()
        invert = pipeline.invert(pipeline.observe(forward, delta=delta))
        _report, metrics = pipeline.report(invert)
        return invert, metrics

    def test_noiseless_letters_are_recovered(self):
        """Noiseless data converge within five iterations and place the inclusions."""
        # Act
        invert, metrics = self.run_chain(self.pipeline("noiseless"))

        # Assert
        self.assertLessEqual(invert.manifest["iterations"], 5)
        self.assertLessEqual(metrics["beta_rel_l2"], 0.35)
        self.assertLessEqual(metrics["gamma_rel_l2"], 0.35)
        self.assertGreaterEqual(metrics["gamma_inclusion_mean"], 0.3)
        self.assertLessEqual(metrics["gamma_inclusion_mean"], 0.5)

    def test_carleman_weight_beats_the_unweighted_functional(self):
        """At 2% noise lambda = 5 beats lambda = 0 by at least a quarter."""
        # Arrange
        pipeline = self.pipeline("ablation", sweep_lambdas=[0.0, 5.0], sweep_lambda_delta=0.02)

        # Act
        _summary, rows = pipeline.sweep_lambda(pipeline.forward())

        # Assert
        errors = {row["lam"]: row["beta_rel_l2"] + row["gamma_rel_l2"] for row in rows}
        self.assertLessEqual(errors[5.0], 0.75 * errors[0.0])

    def test_errors_grow_with_the_noise_level(self):
        """Errors do not drop as the noise grows, and the 5% run still finds beta."""
        # Arrange
        pipeline = self.pipeline("noise", sweep_deltas=[0.0, 0.02, 0.05])

        # Act
        _summary, rows = pipeline.sweep_noise(pipeline.forward())

        # Assert
        for target in ("beta", "gamma"):
            errors = [row[f"{target}_rel_l2"] for row in rows]
            for before, after in zip(errors, errors[1:]):
                self.assertGreaterEqual(after, 0.9 * before, target)
        self.assertGreaterEqual(rows[-1]["beta_jaccard"], 0.3)

    def test_repeated_runs_are_byte_identical(self):
        """Two runs with one seed write the same bytes at every stage."""
        # Act
        for out in ("first", "second"):
            self.run_chain(self.pipeline(out))

        # Assert
        for name in ("forward/rho_S.fld", "observe/r2.fld", "observe/s1.fld", "invert/w3.fld",
                     "report/beta_rec.fld", "report/metrics.json"):
            self.assertEqual((self.root / "first" / name).read_bytes(),
                             (self.root / "second" / name).read_bytes(), name)
