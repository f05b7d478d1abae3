"""Invert one noisy data set for every lambda in sweep_lambdas."""
from __future__ import annotations

from epidemic.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Observe a forward bundle at sweep_lambda_delta, then invert and report once per lambda."

    def run(self, pipeline, options) -> None:
        forward = pipeline.input_bundle("observe", options.get("bundle"))
        handle, rows = pipeline.sweep_lambda(forward)
        for row in rows:
            self.stdout.write(
                f"lam={row['lam']:g}: beta rel L2 {row['beta_rel_l2']:.4g}, gamma rel L2 {row['gamma_rel_l2']:.4g}"
            )
        self.done(handle)
