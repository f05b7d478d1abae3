"""Observe, invert and report a forward bundle at every noise level in sweep_deltas."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Run observe, invert and report once per noise level and write a summary CSV."

    def run(self, pipeline, options) -> None:
        forward = pipeline.input_bundle("observe", options.get("bundle"))
        handle, rows = pipeline.sweep_noise(forward)
        for row in rows:
            self.stdout.write(
                f"delta={row['delta']:g}: beta rel L2 {row['beta_rel_l2']:.4g}, gamma rel L2 {row['gamma_rel_l2']:.4g}"
            )
        self.done(handle)
