"""Extract noisy Cauchy data from a forward bundle and derive the inversion inputs."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = (
        "Sample the measurements on the inverse grid, add noise, smooth and differentiate them, "
        "and write an observe bundle with the clean data and the derived fields."
    )

    def run(self, pipeline, options) -> None:
        forward = pipeline.input_bundle("observe", options.get("bundle"))
        self.done(pipeline.observe(forward))
