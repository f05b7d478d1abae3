"""Reconstruct the coefficients from an invert bundle and score them."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Back-substitute beta and gamma, compute error metrics and export CSV heatmaps."

    def run(self, pipeline, options) -> None:
        invert = pipeline.input_bundle("report", options.get("bundle"))
        handle, metrics = pipeline.report(invert)
        self.write_metrics(metrics)
        self.done(handle)
