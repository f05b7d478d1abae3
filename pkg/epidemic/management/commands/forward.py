"""Simulate the SIR system on the fine grid and write a forward bundle."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Rasterize the phantom, run the forward solver on the fine grid and write a forward bundle."
    consumes_bundle = False

    def run(self, pipeline, options) -> None:
        self.done(pipeline.forward())
