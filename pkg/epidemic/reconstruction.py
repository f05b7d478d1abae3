"""Back-substitution from W to the coefficients, error metrics and CSV export."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import ConfigurationError, DimensionError
from .grid import ScalarField, export_csv_slices, quadrature_weights
from .inversion import WField, coefficient_maps
from .observation import SCoefficients

logger = logging.getLogger(__name__)

MODES = ("midpoint", "average")


@dataclass(frozen=True, eq=False)
class Reconstruction:
    beta_rec: ScalarField
    gamma_rec: ScalarField
    beta_tvar: ScalarField
    gamma_tvar: ScalarField
    mode: str = "midpoint"
    metrics: dict[str, float] = field(default_factory=dict)

    def fields(self) -> dict[str, ScalarField]:
        return {
            "beta_rec": self.beta_rec,
            "gamma_rec": self.gamma_rec,
            "beta_tvar": self.beta_tvar,
            "gamma_tvar": self.gamma_tvar,
        }


def reconstruct_coefficients(w: WField, s: SCoefficients, mode: str = "midpoint") -> Reconstruction:
    """beta = (w1 - int w4) s1 + s2 and gamma = (w3 - int w6) s3 + s4, read at mid time or time-averaged."""
    if mode not in MODES:
        raise ConfigurationError(f"reconstruction mode must be one of {MODES}, got {mode!r}")
    spatial = w.grid.spatial()
    B, G = coefficient_maps(w, s)
    if mode == "midpoint":
        mid = w.grid.mid_index
        beta = w.values[0, mid] * s.s1.values + s.s2.values
        gamma = w.values[2, mid] * s.s3.values + s.s4.values
    else:
        beta, gamma = B.mean(axis=0), G.mean(axis=0)
    return Reconstruction(
        beta_rec=ScalarField(spatial, beta),
        gamma_rec=ScalarField(spatial, gamma),
        beta_tvar=ScalarField(spatial, B.var(axis=0)),
        gamma_tvar=ScalarField(spatial, G.var(axis=0)),
        mode=mode,
    )


def _relative_errors(rec: ScalarField, truth: ScalarField) -> tuple[float, float]:
    weights = quadrature_weights(truth.grid).values
    diff = rec.values - truth.values
    l2 = np.sqrt(np.sum(weights * diff**2))
    l2_truth = np.sqrt(np.sum(weights * truth.values**2))
    linf_truth = np.max(np.abs(truth.values))
    rel_l2 = float(l2 / l2_truth) if l2_truth > 0 else float(l2)
    rel_linf = float(np.max(np.abs(diff)) / linf_truth) if linf_truth > 0 else float(np.max(np.abs(diff)))
    return rel_l2, rel_linf


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def half_max_set(values: np.ndarray, background: float, inside: float) -> np.ndarray:
    threshold = background + 0.5 * (inside - background)
    return values >= threshold if inside >= background else values <= threshold


@dataclass(frozen=True)
class Truth:
    """Known coefficient and, when it is a phantom, its inclusion mask and values."""

    field: ScalarField
    mask: np.ndarray | None = None
    background: float | None = None
    inside: float | None = None


def error_metrics(rec: Reconstruction, truth: Mapping[str, Truth]) -> dict[str, float]:
    """Relative L2/Linf errors, mean over the true mask and half-max Jaccard index per coefficient."""
    reconstructed = {"beta": rec.beta_rec, "gamma": rec.gamma_rec}
    metrics: dict[str, float] = {}
    for name, known in truth.items():
        estimate = reconstructed[name]
        if known.field.grid != estimate.grid:
            raise DimensionError(f"true {name} and its reconstruction live on different grids")
        rel_l2, rel_linf = _relative_errors(estimate, known.field)
        metrics[f"{name}_rel_l2"] = rel_l2
        metrics[f"{name}_rel_linf"] = rel_linf
        if known.mask is None or known.inside is None or known.background is None or not known.mask.any():
            continue
        mean_inside = float(estimate.values[known.mask].mean())
        metrics[f"{name}_inclusion_mean"] = mean_inside
        metrics[f"{name}_inclusion_error"] = abs(mean_inside - known.inside)
        recovered = half_max_set(estimate.values, known.background, known.inside)
        metrics[f"{name}_jaccard"] = jaccard(recovered, known.mask)
    logger.info("metrics: %s", ", ".join(f"{k}={v:.4g}" for k, v in sorted(metrics.items())))
    return metrics


def export_heatmaps(fields: Mapping[str, ScalarField], out_dir: str | Path,
                    slices: list[int] | None = None) -> list[Path]:
    """One CSV per field (per requested time slice for space-time fields)."""
    paths: list[Path] = []
    try:
        for name, values in fields.items():
            paths.extend(export_csv_slices(values, out_dir, name, slices))
    except OSError as exc:
        raise ConfigurationError(f"cannot write heatmaps to {out_dir}: {exc}") from exc
    return paths
