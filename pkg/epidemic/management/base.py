"""Shared plumbing for the pipeline management commands."""
from __future__ import annotations

import argparse
import json
from typing import Any

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, DjangoHelpFormatter
from rest_framework.exceptions import ValidationError
from rest_framework.fields import empty

from epidemic import services
from epidemic.exceptions import ConfigurationError, EpidemicError
from epidemic.runconfig import RunConfig
from epidemic.serializers import RunConfigSerializer


class EpilogHelpFormatter(DjangoHelpFormatter, argparse.RawDescriptionHelpFormatter):
    """Keeps the configuration-key table in the epilog as written."""


def _default(field: Any) -> str:
    default = field.default
    if default is empty:
        return "[]"
    if callable(default):
        default = default()
    return json.dumps(default)


def config_help() -> str:
    """One line per configuration key: name, default and provenance note."""
    lines = ["configuration keys (flat JSON, --config):"]
    for name, field in RunConfigSerializer().fields.items():
        lines.append(f"  {name:<20} default {_default(field):<28} {field.help_text or ''}")
    lines.append("")
    lines.append("exit codes: 0 success, 2 config error, 3 numerical failure, 4 provenance error")
    return "\n".join(lines)


class PipelineCommand(BaseCommand):
    """Parses the common flags, loads the run configuration and maps failures to exit codes."""

    consumes_bundle = True

    def create_parser(self, prog_name: str, subcommand: str, **kwargs: Any):
        parser = super().create_parser(prog_name, subcommand, epilog=config_help(), **kwargs)
        parser.formatter_class = EpilogHelpFormatter
        return parser

    def add_arguments(self, parser) -> None:
        parser.add_argument("--config", help="Path to a flat JSON run configuration.")
        parser.add_argument("--out", help="Run directory; each stage writes a subdirectory named after it.")
        parser.add_argument("--seed", type=int, help="Seed override (unsigned 64-bit).")
        parser.add_argument(
            "--preset", default=None,
            help=f"Named scenario layered under the config (default {settings.EPIDEMIC['DEFAULT_PRESET']}).",
        )
        if self.consumes_bundle:
            parser.add_argument("--bundle", help="Input bundle directory (defaults to the previous stage in --out).")

    def load(self, options: dict[str, Any]) -> RunConfig:
        preset = options.get("preset") or settings.EPIDEMIC["DEFAULT_PRESET"]
        return services.load_config(options.get("config"), preset, {"seed": options.get("seed")})

    def handle(self, *args: Any, **options: Any) -> None:
        try:
            config = self.load(options)
            pipeline = services.PipelineService(config, options.get("out"))
            self.run(pipeline, options)
        except ValidationError as exc:
            lines = services.validation_messages(exc.detail)
            raise CommandError("invalid configuration:\n  " + "\n  ".join(lines),
                               returncode=ConfigurationError.exit_code) from exc
        except EpidemicError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=exc.exit_code) from exc

    def run(self, pipeline: services.PipelineService, options: dict[str, Any]) -> None:
        raise NotImplementedError

    def done(self, handle: services.BundleHandle) -> None:
        self.stdout.write(self.style.SUCCESS(f"{handle.stage} bundle {handle.content_hash[:12]} -> {handle.directory}"))

    def write_metrics(self, metrics: dict[str, float]) -> None:
        for key in sorted(metrics):
            self.stdout.write(f"  {key:<24} {metrics[key]:.6g}")
