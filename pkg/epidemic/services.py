"""Pipeline services: run configuration loading, bundle IO and provenance, and the stages."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
from django.conf import settings
from django.db import transaction
from django.utils import timezone

from . import __version__, models
from .carleman import check_carleman_estimate, check_volterra_estimate
from .exceptions import ConfigurationError, ProvenanceError
from .forward import ForwardSolution, forward_solve
from .grid import ScalarField, boundary_mask, gamma_mask, read_field, write_field
from .inversion import History, InverseConfig, WField, ccmm_iterate
from .observation import (
    CauchyData,
    DerivedData,
    NoiseModel,
    SCoefficients,
    Trace,
    Transport,
    add_noise,
    build_boundary_vectors,
    extract_measurements,
)
from .phantoms import PhantomSpec, build_phantom, inside_value, truth_mask
from .presets import get_preset
from .reconstruction import Truth, error_metrics, export_heatmaps, reconstruct_coefficients
from .runconfig import RunConfig
from .serializers import (
    CHECK_KEYS,
    FORWARD_KEYS,
    INVERT_KEYS,
    OBSERVE_KEYS,
    REPORT_KEYS,
    RunConfigSerializer,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SIDECAR = "run.json"
STAGE_INPUT = {"observe": "forward", "invert": "observe", "report": "invert"}
HISTORY_COLUMNS = (
    "iteration", "step_norm", "functional", "compat_defect", "w_norm", "beta_tvar", "gamma_tvar", "error_norm",
)


# --- configuration -------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a JSON object of configuration keys")
    return data


def merge_config(preset: str | None = None, data: Mapping[str, Any] | None = None,
                 overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """defaults < preset < JSON file < command-line flags."""
    merged: dict[str, Any] = {}
    if preset:
        merged.update(get_preset(preset))
        merged["preset"] = preset
    merged.update(data or {})
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return merged


def load_config(config_path: str | Path | None = None, preset: str | None = None,
                overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Validate a merged configuration; raises rest_framework ValidationError per field."""
    data = read_config_file(config_path) if config_path else None
    serializer = RunConfigSerializer(data=merge_config(preset, data, overrides))
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def validation_messages(detail: Any, prefix: str = "") -> list[str]:
    """Flatten DRF error detail into 'key: message' lines."""
    if isinstance(detail, Mapping):
        lines = []
        for key, value in detail.items():
            lines.extend(validation_messages(value, f"{prefix}.{key}" if prefix else str(key)))
        return lines
    if isinstance(detail, (list, tuple)):
        lines = []
        for k, value in enumerate(detail):
            if isinstance(value, (Mapping, list, tuple)):
                lines.extend(validation_messages(value, f"{prefix}[{k}]"))
            else:
                lines.append(f"{prefix}: {value}" if prefix else str(value))
        return lines
    return [f"{prefix}: {detail}" if prefix else str(detail)]


# --- bundles -------------------------------------------------------------------------


def canonical_json(data: Any) -> bytes:
    return (json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def code_version() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=settings.BASE_DIR,
            capture_output=True, text=True, timeout=5, check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    return result.stdout.strip() or __version__


@dataclass(frozen=True)
class BundleHandle:
    directory: Path
    manifest: dict[str, Any]
    content_hash: str

    @property
    def stage(self) -> str:
        return self.manifest["stage"]

    @property
    def config(self) -> dict[str, Any]:
        return self.manifest["config"]

    @property
    def parent_hash(self) -> str | None:
        return self.manifest.get("parent")

    def path(self, name: str) -> Path:
        if name not in self.manifest["files"]:
            raise ProvenanceError(f"{self.directory} holds no payload named {name}")
        return self.directory / name

    def field(self, name: str) -> ScalarField:
        return read_field(self.path(name))


def seal_bundle(directory: Path, stage: str, config: dict[str, Any], seed: int, files: Iterable[str],
                parent: BundleHandle | None = None, extra: dict[str, Any] | None = None,
                preset: str = "") -> BundleHandle:
    """Hash the payload files, write the manifest and its timestamp sidecar, index the bundle."""
    manifest = {
        "stage": stage,
        "version": code_version(),
        "config": config,
        "seed": seed,
        "files": {name: sha256_file(directory / name) for name in sorted(files)},
        "parent": parent.content_hash if parent else None,
    }
    manifest.update(extra or {})
    raw = canonical_json(manifest)
    (directory / MANIFEST).write_bytes(raw)
    handle = BundleHandle(directory, manifest, hashlib.sha256(raw).hexdigest())
    sidecar = {
        "content_hash": handle.content_hash,
        "created_at": timezone.now().isoformat(),
        "parent_directory": str(parent.directory) if parent else None,
    }
    (directory / SIDECAR).write_text(json.dumps(sidecar, indent=2) + "\n")
    register_bundle(handle, parent, preset)
    logger.info("sealed %s bundle %s in %s", stage, handle.content_hash[:12], directory)
    return handle


def open_bundle(directory: str | Path, stage: str, expected_hash: str | None = None) -> BundleHandle:
    """Load a bundle and re-hash its payload; any mismatch is a provenance error."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise ProvenanceError(f"{directory} is not a bundle (no {MANIFEST}); run the {stage} stage first")
    raw = manifest_path.read_bytes()
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProvenanceError(f"corrupt manifest in {directory}: {exc}") from exc
    content_hash = hashlib.sha256(raw).hexdigest()
    if manifest.get("stage") != stage:
        raise ProvenanceError(f"{directory} holds a {manifest.get('stage')!r} bundle, expected {stage!r}")
    if expected_hash is not None and content_hash != expected_hash:
        logger.error("bundle %s hashes to %s, expected %s", directory, content_hash[:12], expected_hash[:12])
        raise ProvenanceError(f"{directory} does not match the recorded bundle hash {expected_hash[:12]}")
    for name, recorded in manifest.get("files", {}).items():
        path = directory / name
        if not path.is_file() or sha256_file(path) != recorded:
            logger.error("payload %s of %s does not match its manifest hash", name, directory)
            raise ProvenanceError(f"payload {name} in {directory} is missing or was modified")
    return BundleHandle(directory, manifest, content_hash)


def open_parent(handle: BundleHandle, stage: str) -> BundleHandle:
    """The verified bundle ``handle`` was derived from."""
    if handle.parent_hash is None:
        raise ProvenanceError(f"{handle.directory} records no parent bundle")
    indexed = models.Bundle.objects.filter(content_hash=handle.parent_hash).first()
    if indexed is not None:
        directory = Path(indexed.directory)
    else:
        sidecar = handle.directory / SIDECAR
        try:
            directory = Path(json.loads(sidecar.read_text())["parent_directory"])
        except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ProvenanceError(f"cannot locate the parent of {handle.directory}") from exc
    return open_bundle(directory, stage, expected_hash=handle.parent_hash)


@transaction.atomic
def register_bundle(handle: BundleHandle, parent: BundleHandle | None = None, preset: str = "") -> models.Bundle:
    parent_row = None
    if parent is not None:
        parent_row = models.Bundle.objects.filter(content_hash=parent.content_hash).first()
    bundle, _created = models.Bundle.objects.update_or_create(
        content_hash=handle.content_hash,
        defaults={
            "stage": handle.stage,
            "parent": parent_row,
            "directory": str(handle.directory.resolve()),
            "preset": preset,
            "seed": str(handle.manifest.get("seed", 0)),
            "manifest": handle.manifest,
        },
    )
    return bundle


@transaction.atomic
def store_history(handle: BundleHandle, history: History) -> None:
    bundle = models.Bundle.objects.get(content_hash=handle.content_hash)
    bundle.iterations.all().delete()
    models.InversionIteration.objects.bulk_create(
        models.InversionIteration(bundle=bundle, **record.as_row()) for record in history
    )


def write_history_csv(path: Path, history: History) -> Path:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for record in history:
            writer.writerow({key: "" if value is None else repr(value) for key, value in record.as_row().items()})
    return path


def write_summary_csv(path: Path, rows: list[dict[str, Any]]) -> Path:
    columns = sorted({key for row in rows for key in row})
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path


# --- payload codecs -------------------------------------------------------------------


def write_cauchy(directory: Path, data: CauchyData) -> list[str]:
    names = []
    for j, p in enumerate(data.p, start=1):
        names.append(write_field(directory / f"p{j}.fld", p).name)
    for prefix, traces in (("r", data.r), ("f", data.f)):
        for j, trace in enumerate(traces, start=1):
            names.append(write_field(directory / f"{prefix}{j}.fld", trace.to_field()).name)
    return names


def write_derived(directory: Path, data: DerivedData) -> list[str]:
    """G0/G1 components as trace fields, then s1..s4 and the smoothed p1, p2."""
    names = []
    for prefix, block, mask in (("g0", data.G0, gamma_mask(data.grid)), ("g1", data.G1, boundary_mask(data.grid))):
        for k, values in enumerate(block, start=1):
            names.append(write_field(directory / f"{prefix}_{k}.fld", Trace(data.grid, mask, values).to_field()).name)
    for k, s in enumerate(data.s.as_tuple(), start=1):
        names.append(write_field(directory / f"s{k}.fld", s).name)
    names.append(write_field(directory / "p1_smooth.fld", data.p1).name)
    names.append(write_field(directory / "p2_smooth.fld", data.p2).name)
    return names


def read_derived(handle: BundleHandle) -> DerivedData:
    g0 = [handle.field(f"g0_{k}.fld") for k in range(1, 7)]
    g1 = [handle.field(f"g1_{k}.fld") for k in range(1, 7)]
    grid = g0[0].grid
    gamma, boundary = gamma_mask(grid), boundary_mask(grid)
    return DerivedData(
        grid=grid,
        G0=np.stack([field.values[:, gamma] for field in g0]),
        G1=np.stack([field.values[:, boundary] for field in g1]),
        s=SCoefficients(*(handle.field(f"s{k}.fld") for k in (1, 2, 3, 4))),
        p1=handle.field("p1_smooth.fld"),
        p2=handle.field("p2_smooth.fld"),
        transport=transport_from(handle.manifest["transport"]),
        c_floor=handle.config["c_floor"],
    )


def write_w(directory: Path, w: WField) -> list[str]:
    return [write_field(directory / f"w{c + 1}.fld", component).name for c, component in enumerate(w.components)]


def read_w(handle: BundleHandle) -> WField:
    return WField.from_components([handle.field(f"w{c}.fld") for c in range(1, 7)])


def transport_from(config: Mapping[str, Any]) -> Transport:
    return Transport(config["d"], tuple(config["q_S"]), tuple(config["q_I"]), tuple(config["q_R"]))


def phantom_from(config: Mapping[str, Any]) -> PhantomSpec:
    return PhantomSpec.from_dict({
        "beta_bg": config["beta_bg"],
        "gamma_bg": config["gamma_bg"],
        "omega": [config["omega_x_min"], config["omega_x_max"], config["omega_y_min"], config["omega_y_max"]],
        "inclusions": config["inclusions"],
    })


# --- the pipeline ----------------------------------------------------------------------


class PipelineService:
    """Runs the stages of one configured scenario, each into its own bundle directory."""

    def __init__(self, config: RunConfig, out: str | Path | None = None) -> None:
        self.config = config
        if out is None:
            out = Path(settings.EPIDEMIC["OUTPUT_ROOT"]) / f"{config.scenario}-seed{config.seed}"
        self.root = Path(out)

    def stage_dir(self, stage: str, root: Path | None = None) -> Path:
        directory = (root or self.root) / stage
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create output directory {directory}: {exc}") from exc
        return directory

    def input_bundle(self, stage: str, directory: str | Path | None = None) -> BundleHandle:
        source = STAGE_INPUT[stage]
        return open_bundle(directory or self.root / source, source)

    def _seal(self, directory: Path, stage: str, keys: tuple[str, ...], files: Iterable[str],
              parent: BundleHandle | None = None, extra: dict[str, Any] | None = None) -> BundleHandle:
        return seal_bundle(directory, stage, self.config.section(*keys), self.config.seed, files,
                           parent=parent, extra=extra, preset=self.config.preset)

    def forward(self, root: Path | None = None) -> BundleHandle:
        directory = self.stage_dir("forward", root)
        params = self.config.forward.params(self.config.phantom)
        solution = forward_solve(params, self.config.forward.grid, self.config.forward.substeps)
        files = [write_field(directory / f"rho_{name}.fld", field).name
                 for name, field in zip("SIR", solution.fields)]
        files.append(write_field(directory / "beta.fld", params.beta).name)
        files.append(write_field(directory / "gamma.fld", params.gamma).name)
        return self._seal(directory, "forward", FORWARD_KEYS, files)

    def observe(self, forward: BundleHandle, root: Path | None = None, delta: float | None = None) -> BundleHandle:
        directory = self.stage_dir("observe", root)
        solution = ForwardSolution(*(forward.field(f"rho_{name}.fld") for name in "SIR"))
        grid = self.config.inverse_grid
        if not np.isclose(grid.t_max, solution.grid.t_max):
            raise ConfigurationError("the inverse time interval differs from the forward run")
        delta = self.config.noise.delta if delta is None else delta
        observation = self.config.observation
        clean = extract_measurements(solution, grid, observation.c_floor)
        data = add_noise(clean, NoiseModel(delta, self.config.seed))
        files = write_cauchy(directory, data)
        (directory / "clean").mkdir(exist_ok=True)
        files.extend(f"clean/{name}" for name in write_cauchy(directory / "clean", clean))

        physics = forward.config
        transport = transport_from(physics)
        derived = build_boundary_vectors(data, transport, observation.p_sm, observation.p_sm_space,
                                         observation.c_floor)
        files.extend(write_derived(directory, derived))
        phantom = phantom_from(physics)
        beta, gamma = build_phantom(phantom, grid.spatial())
        files.append(write_field(directory / "beta_true.fld", beta).name)
        files.append(write_field(directory / "gamma_true.fld", gamma).name)
        config = {**self.config.section(*OBSERVE_KEYS), "delta": delta}
        extra = {"transport": {key: physics[key] for key in ("d", "q_S", "q_I", "q_R")},
                 "phantom": phantom.to_dict()}
        return seal_bundle(directory, "observe", config, self.config.seed, files, parent=forward,
                           extra=extra, preset=self.config.preset)

    def invert(self, observe: BundleHandle, root: Path | None = None,
               inverse: InverseConfig | None = None) -> BundleHandle:
        directory = self.stage_dir("invert", root)
        inverse = inverse or self.config.inverse
        data = read_derived(observe)
        w, history = ccmm_iterate(data, inverse)
        files = write_w(directory, w)
        for k, s in enumerate(data.s.as_tuple(), start=1):
            files.append(write_field(directory / f"s{k}.fld", s).name)
        files.append(write_history_csv(directory / "history.csv", history).name)
        config = {**self.config.section(*INVERT_KEYS), "lam": inverse.lam}
        extra = {"forward": observe.parent_hash, "converged": history.converged, "iterations": len(history) - 1}
        handle = seal_bundle(directory, "invert", config, self.config.seed, files, parent=observe,
                             extra=extra, preset=self.config.preset)
        store_history(handle, history)
        if not history.converged:
            logger.warning("inversion in %s did not reach stop_tol", directory)
        return handle

    def report(self, invert: BundleHandle, root: Path | None = None) -> tuple[BundleHandle, dict[str, float]]:
        directory = self.stage_dir("report", root)
        observe = open_parent(invert, "observe")
        if observe.parent_hash != invert.manifest.get("forward"):
            raise ProvenanceError("the inversion and its observation bundle trace back to different forward runs")
        s = SCoefficients(*(invert.field(f"s{k}.fld") for k in (1, 2, 3, 4)))
        rec = reconstruct_coefficients(read_w(invert), s, self.config.mode)
        phantom = PhantomSpec.from_dict(observe.manifest["phantom"])
        grid = rec.beta_rec.grid
        truth = {
            target: Truth(observe.field(f"{target}_true.fld"), truth_mask(phantom, grid, target),
                          phantom.background(target), inside_value(phantom, target))
            for target in ("beta", "gamma")
        }
        metrics = error_metrics(rec, truth)
        fields = rec.fields()
        files = [write_field(directory / f"{name}.fld", field).name for name, field in fields.items()]
        csv_fields = {**fields, "beta_true": truth["beta"].field, "gamma_true": truth["gamma"].field}
        files.extend(f"csv/{path.name}" for path in export_heatmaps(csv_fields, directory / "csv"))
        (directory / "metrics.json").write_bytes(canonical_json(metrics))
        files.append("metrics.json")
        extra = {"forward": invert.manifest.get("forward")}
        handle = self._seal(directory, "report", REPORT_KEYS, files, parent=invert, extra=extra)
        return handle, metrics

    def sweep_lambda(self, forward: BundleHandle) -> tuple[BundleHandle, list[dict[str, Any]]]:
        """One observation at the sweep noise level, then an inversion and report per lambda."""
        root = self.root / "sweep_lambda"
        observe = self.observe(forward, root, delta=self.config.sweep_lambda_delta)
        rows = []
        for lam in self.config.sweep_lambdas:
            branch = root / f"lam_{lam:g}"
            inverse = replace(self.config.inverse, lam=lam)
            invert = self.invert(observe, branch, inverse)
            _report, metrics = self.report(invert, branch)
            rows.append({"lam": lam, "delta": self.config.sweep_lambda_delta,
                         "iterations": invert.manifest["iterations"], **metrics})
        return self._summary(root, "sweep_lambda", rows, forward), rows

    def sweep_noise(self, forward: BundleHandle) -> tuple[BundleHandle, list[dict[str, Any]]]:
        root = self.root / "sweep_noise"
        rows = []
        for delta in self.config.sweep_deltas:
            branch = root / f"delta_{delta:g}"
            observe = self.observe(forward, branch, delta=delta)
            invert = self.invert(observe, branch)
            _report, metrics = self.report(invert, branch)
            rows.append({"lam": self.config.inverse.lam, "delta": delta,
                         "iterations": invert.manifest["iterations"], **metrics})
        return self._summary(root, "sweep_noise", rows, forward), rows

    def _summary(self, root: Path, name: str, rows: list[dict[str, Any]], forward: BundleHandle) -> BundleHandle:
        root.mkdir(parents=True, exist_ok=True)
        write_summary_csv(root / "summary.csv", rows)
        swept = ("sweep_lambdas", "sweep_lambda_delta") if name == "sweep_lambda" else ("sweep_deltas",)
        keys = (*OBSERVE_KEYS, *INVERT_KEYS, *swept)
        return self._seal(root, "sweep", keys, ["summary.csv"], parent=forward, extra={"sweep": name})

    def check_estimates(self) -> tuple[BundleHandle, dict[str, Any]]:
        directory = self.stage_dir("check")
        checks = self.config.checks
        volterra = check_volterra_estimate(checks.lambdas, checks.trials, self.config.seed)
        carleman = check_carleman_estimate(checks.lambdas, checks.carleman_trials, self.config.seed,
                                           d=self.config.forward.d)
        result = {
            report.name: {
                "passed": report.passed,
                "constant": report.constant,
                "rows": [{"lam": row.lam, "constant": row.constant, "status": row.status, **row.extra}
                         for row in report.rows],
            }
            for report in (volterra, carleman)
        }
        rows = [{"check": name, **row} for name, report in result.items() for row in report["rows"]]
        write_summary_csv(directory / "estimates.csv", rows)
        (directory / "estimates.json").write_bytes(canonical_json(result))
        handle = self._seal(directory, "check", CHECK_KEYS, ["estimates.csv", "estimates.json"])
        return handle, result

