"""Typed run configuration assembled from a validated flat JSON config."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .forward import SirParams
from .grid import GridSpec, ScalarField
from .inversion import InverseConfig
from .observation import NoiseModel, Transport
from .phantoms import PhantomSpec, build_phantom


@dataclass(frozen=True)
class ForwardSettings:
    """Simulation domain G, its fine grid and the known transport and initial data."""

    grid: GridSpec
    substeps: int
    d: float
    q_S: tuple[float, float]
    q_I: tuple[float, float]
    q_R: tuple[float, float]
    rho0: tuple[float, float, float]

    @property
    def transport(self) -> Transport:
        return Transport(self.d, self.q_S, self.q_I, self.q_R)

    def params(self, phantom: PhantomSpec) -> SirParams:
        spatial = self.grid.spatial()
        beta, gamma = build_phantom(phantom, spatial)
        rho0 = [ScalarField.constant(spatial, value) for value in self.rho0]
        return SirParams(self.d, self.q_S, self.q_I, self.q_R, beta, gamma, *rho0)


@dataclass(frozen=True)
class ObservationSettings:
    grid: GridSpec
    p_sm: float = 0.99
    p_sm_space: float | None = None
    c_floor: float = 1e-3


@dataclass(frozen=True)
class CheckSettings:
    lambdas: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0)
    trials: int = 100
    carleman_trials: int = 50


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    preset: str
    seed: int
    forward: ForwardSettings
    phantom: PhantomSpec
    noise: NoiseModel
    observation: ObservationSettings
    inverse: InverseConfig
    mode: str = "midpoint"
    sweep_lambdas: tuple[float, ...] = (0.0, 3.0, 5.0, 7.0, 10.0)
    sweep_lambda_delta: float = 0.02
    sweep_deltas: tuple[float, ...] = (0.0, 0.02, 0.05)
    checks: CheckSettings = field(default_factory=CheckSettings)
    raw: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def inverse_grid(self) -> GridSpec:
        return self.observation.grid

    def section(self, *keys: str) -> dict[str, Any]:
        """The effective values of ``keys``, for manifests of stages that depend only on them."""
        return {key: self.raw[key] for key in keys}
