"""Run the contraction-mapping inversion on an observe bundle."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Iterate the Carleman-weighted least-squares steps on the derived data and write an invert bundle."

    def run(self, pipeline, options) -> None:
        observe = pipeline.input_bundle("invert", options.get("bundle"))
        handle = pipeline.invert(observe)
        self.stdout.write(
            f"{handle.manifest['iterations']} iterations, converged: {handle.manifest['converged']}"
        )
        self.done(handle)
