"""DRF serializers validating the flat JSON run configuration."""
from __future__ import annotations

from typing import Any

from rest_framework import serializers

from .grid import GridSpec
from .inversion import LS_METHODS, InverseConfig
from .observation import NoiseModel
from .phantoms import GLYPHS, Inclusion, PhantomSpec
from .reconstruction import MODES
from .runconfig import CheckSettings, ForwardSettings, ObservationSettings, RunConfig

U64_MAX = 2**64 - 1

# keys each stage depends on; a stage manifest records exactly these
FORWARD_KEYS = (
    "scenario", "G_x_min", "G_x_max", "G_y_min", "G_y_max", "fine_nx", "fine_ny", "fine_nt", "substeps",
    "omega_x_min", "omega_x_max", "omega_y_min", "omega_y_max", "T",
    "d", "q_S", "q_I", "q_R", "rho0_S", "rho0_I", "rho0_R", "beta_bg", "gamma_bg", "inclusions",
)
OBSERVE_KEYS = ("nx", "ny", "nt", "delta", "p_sm", "p_sm_space", "c_floor")
INVERT_KEYS = (
    "lam", "xi", "kappa_n", "kappa_c", "reg_order",
    "stop_tol", "max_iter", "ls_method", "ls_tol", "ls_max_iter",
)
REPORT_KEYS = ("mode",)
CHECK_KEYS = ("check_lambdas", "check_trials", "carleman_trials")


def _vector(default: list[float], help_text: str) -> serializers.ListField:
    return serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2,
        default=lambda: list(default), help_text=help_text,
    )


def _float_list(default: list[float], help_text: str, **kwargs: Any) -> serializers.ListField:
    return serializers.ListField(
        child=serializers.FloatField(**kwargs), allow_empty=False,
        default=lambda: list(default), help_text=help_text,
    )


class InclusionSerializer(serializers.Serializer):
    target = serializers.ChoiceField(choices=["beta", "gamma"], help_text="Coefficient the shape is painted into.")
    shape = serializers.ChoiceField(choices=sorted(GLYPHS), help_text="Glyph filling the box.")
    box = serializers.ListField(
        child=serializers.FloatField(), min_length=4, max_length=4,
        help_text="[x0, x1, y0, y1], inside the measurement domain.",
    )
    value = serializers.FloatField(min_value=0.0, help_text="Coefficient value inside the shape.")

    def validate_box(self, value: list[float]) -> list[float]:
        x0, x1, y0, y1 = value
        if not (x0 < x1 and y0 < y1):
            raise serializers.ValidationError("box must satisfy x0 < x1 and y0 < y1.")
        return value

    def validate_value(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("inclusion value must be positive.")
        return value


class RunConfigSerializer(serializers.Serializer):
    """Every key of the flat JSON run configuration, with its default and where that default comes from."""

    scenario = serializers.CharField(default="custom", max_length=64, help_text="Free-form run name.")
    preset = serializers.CharField(default="", allow_blank=True, max_length=64,
                                   help_text="Preset the config was layered on (set by --preset).")
    seed = serializers.IntegerField(default=0, min_value=0, max_value=U64_MAX,
                                    help_text="Noise seed, recorded in every manifest.")

    G_x_min = serializers.FloatField(default=0.45, help_text="Simulation box around the disk (x-1.5)^2+y^2<1.")
    G_x_max = serializers.FloatField(default=2.55, help_text="Simulation box around the disk (x-1.5)^2+y^2<1.")
    G_y_min = serializers.FloatField(default=-1.05, help_text="Simulation box around the disk (x-1.5)^2+y^2<1.")
    G_y_max = serializers.FloatField(default=1.05, help_text="Simulation box around the disk (x-1.5)^2+y^2<1.")
    fine_nx = serializers.IntegerField(default=271, min_value=3,
                                       help_text="Fine x nodes; spacing below the 0.05 mesh edge of the reference runs.")
    fine_ny = serializers.IntegerField(default=271, min_value=3,
                                       help_text="Fine y nodes; spacing below the 0.05 mesh edge of the reference runs.")
    fine_nt = serializers.IntegerField(default=81, min_value=2, help_text="Stored fine time slices on [0, T].")
    substeps = serializers.IntegerField(default=1, min_value=1, help_text="Internal steps per stored slice.")

    omega_x_min = serializers.FloatField(default=1.0, help_text="Measurement domain 1 < x < 2.")
    omega_x_max = serializers.FloatField(default=2.0, help_text="Measurement domain 1 < x < 2.")
    omega_y_min = serializers.FloatField(default=-0.5, help_text="Measurement domain |y| < 0.5.")
    omega_y_max = serializers.FloatField(default=0.5, help_text="Measurement domain |y| < 0.5.")
    nx = serializers.IntegerField(default=33, min_value=3, help_text="Inverse x nodes (33x33 reference mesh).")
    ny = serializers.IntegerField(default=33, min_value=3, help_text="Inverse y nodes (33x33 reference mesh).")
    T = serializers.FloatField(default=1.0, help_text="End time T = 1.")
    nt = serializers.IntegerField(default=11, min_value=5, help_text="Eleven equally spaced data times; odd.")

    d = serializers.FloatField(default=0.1, help_text="Diffusivity d = 0.1.")
    q_S = _vector([0.2, 0.2], "Velocity q_S = (0.2, 0.2).")
    q_I = _vector([0.2, 0.2], "Velocity q_I = (0.2, 0.2).")
    q_R = _vector([0.2, 0.2], "Velocity q_R = (0.2, 0.2).")
    rho0_S = serializers.FloatField(default=0.6, help_text="Initial susceptible density 0.6.")
    rho0_I = serializers.FloatField(default=0.8, help_text="Initial infected density 0.8.")
    rho0_R = serializers.FloatField(default=0.0, help_text="Initial recovered density 0.")
    beta_bg = serializers.FloatField(default=0.1, min_value=0.0, help_text="Infection rate outside the shapes, 0.1.")
    gamma_bg = serializers.FloatField(default=0.1, min_value=0.0, help_text="Recovery rate outside the shapes, 0.1.")
    inclusions = InclusionSerializer(many=True, required=False,
                                     help_text="Letter inclusions; presets ship A/M, Omega/B.")

    delta = serializers.FloatField(default=0.0, min_value=0.0,
                                   help_text="Noise level in [0, 1); reference runs use 0, 2% and 5%.")
    p_sm = serializers.FloatField(default=0.99, min_value=0.0, max_value=1.0,
                                  help_text="Time smoothing-spline parameter (index-normalized), 0.99.")
    p_sm_space = serializers.FloatField(default=None, allow_null=True, min_value=0.0, max_value=1.0,
                                        help_text="Spatial smoothing-spline parameter for the p-data; "
                                                  "null picks it by generalized cross-validation.")
    c_floor = serializers.FloatField(default=1e-3, min_value=0.0,
                                     help_text="Lower bound on |p1|, |p2| where s-coefficients divide.")

    lam = serializers.FloatField(default=5.0, min_value=0.0, help_text="Carleman parameter lambda = 5.")
    xi = serializers.FloatField(default=1e-2, help_text="Regularization xi = 1e-2, chosen by trial and error.")
    kappa_n = serializers.FloatField(default=None, allow_null=True,
                                     help_text="Neumann rows relative to the PDE rows at the same node; null means 100.")
    kappa_c = serializers.FloatField(default=0.0, min_value=0.0,
                                     help_text="Weight of the d/dt w_j = w_(j+3) compatibility rows; 0 disables.")
    reg_order = serializers.ChoiceField(choices=[2], default=2, help_text="H2 regularization as in the reference runs.")
    stop_tol = serializers.FloatField(default=1e-5, help_text="Stop when successive iterates differ by less.")
    max_iter = serializers.IntegerField(default=10, min_value=0, help_text="Cap on outer iterations.")
    ls_method = serializers.ChoiceField(choices=list(LS_METHODS), default="direct",
                                        help_text="Least-squares back-end.")
    ls_tol = serializers.FloatField(default=1e-10, min_value=0.0, help_text="Iterative back-end tolerance.")
    ls_max_iter = serializers.IntegerField(default=5000, min_value=1, help_text="Iterative back-end cap.")

    mode = serializers.ChoiceField(choices=list(MODES), default="midpoint",
                                   help_text="Read the coefficients at T/2 or average them in time.")
    sweep_lambdas = _float_list([0.0, 3.0, 5.0, 7.0, 10.0], "Lambda sweep values.", min_value=0.0)
    sweep_lambda_delta = serializers.FloatField(default=0.02, min_value=0.0, help_text="Noise level of the lambda sweep.")
    sweep_deltas = _float_list([0.0, 0.02, 0.05], "Noise sweep values.", min_value=0.0)
    check_lambdas = _float_list([1.0, 2.0, 5.0, 10.0], "Lambdas of the weighted-estimate checks.")
    check_trials = serializers.IntegerField(default=100, min_value=1, help_text="Random fields, Volterra check.")
    carleman_trials = serializers.IntegerField(default=50, min_value=1, help_text="Random fields, Carleman check.")

    def validate_nt(self, value: int) -> int:
        if value % 2 == 0:
            raise serializers.ValidationError("nt must be odd so that T/2 is a grid time.")
        return value

    def validate_T(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("T must be positive.")
        return value

    def validate_d(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("diffusivity must be positive.")
        return value

    def validate_delta(self, value: float) -> float:
        if value >= 1.0:
            raise serializers.ValidationError("noise level must lie in [0, 1).")
        return value

    def validate_sweep_lambda_delta(self, value: float) -> float:
        return self.validate_delta(value)

    def validate_sweep_deltas(self, value: list[float]) -> list[float]:
        if any(delta >= 1.0 for delta in value):
            raise serializers.ValidationError("noise levels must lie in [0, 1).")
        return value

    def validate_check_lambdas(self, value: list[float]) -> list[float]:
        if any(lam <= 0 for lam in value):
            raise serializers.ValidationError("estimate checks need lambda > 0.")
        return value

    def validate_xi(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("xi must be positive.")
        return value

    def validate_stop_tol(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("stop_tol must be positive.")
        return value

    def validate_kappa_n(self, value: float | None) -> float | None:
        if value is not None and value <= 0:
            raise serializers.ValidationError("kappa_n must be positive.")
        return value

    def validate_p_sm(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("smoothing parameter must lie in (0, 1].")
        return value

    def validate_p_sm_space(self, value: float | None) -> float | None:
        return value if value is None else self.validate_p_sm(value)

    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        unknown = sorted(set(getattr(self, "initial_data", {})) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: "unknown configuration key." for key in unknown})
        errors: dict[str, str] = {}

        omega = (attrs["omega_x_min"], attrs["omega_x_max"], attrs["omega_y_min"], attrs["omega_y_max"])
        if not (omega[0] < omega[1] and omega[2] < omega[3]):
            errors["omega_x_min"] = "measurement domain bounds must be increasing."
        elif not (attrs["G_x_min"] < omega[0] and omega[1] < attrs["G_x_max"]
                  and attrs["G_y_min"] < omega[2] and omega[3] < attrs["G_y_max"]):
            errors["omega_x_min"] = "the measurement domain must lie strictly inside the simulation box."

        if not (attrs["G_x_min"] < attrs["G_x_max"] and attrs["G_y_min"] < attrs["G_y_max"]):
            errors["G_x_min"] = "simulation box bounds must be increasing."
        else:
            fine_hx = (attrs["G_x_max"] - attrs["G_x_min"]) / (attrs["fine_nx"] - 1)
            fine_hy = (attrs["G_y_max"] - attrs["G_y_min"]) / (attrs["fine_ny"] - 1)
            hx = (omega[1] - omega[0]) / (attrs["nx"] - 1)
            hy = (omega[3] - omega[2]) / (attrs["ny"] - 1)
            if fine_hx > hx / 4 * (1 + 1e-9):
                errors["fine_nx"] = "the fine grid must be at least 4x denser in x than the inverse grid."
            if fine_hy > hy / 4 * (1 + 1e-9):
                errors["fine_ny"] = "the fine grid must be at least 4x denser in y than the inverse grid."
        if (attrs["fine_nt"] - 1) < 8 * (attrs["nt"] - 1):
            errors["fine_nt"] = "the fine grid must be at least 8x denser in time than the inverse grid."

        for k, inclusion in enumerate(attrs.get("inclusions", [])):
            x0, x1, y0, y1 = inclusion["box"]
            if x0 < omega[0] or x1 > omega[1] or y0 < omega[2] or y1 > omega[3]:
                errors[f"inclusions[{k}]"] = f"inclusion box {inclusion['box']} lies outside the measurement domain."

        if errors:
            raise serializers.ValidationError(errors)
        return attrs

    def effective(self) -> dict[str, Any]:
        """The validated config as plain JSON-ready values, every key present."""
        data = dict(self.validated_data)
        data["inclusions"] = [dict(inclusion) for inclusion in data.get("inclusions", [])]
        data["reg_order"] = int(data["reg_order"])
        return data

    def create(self, validated_data: dict[str, Any]) -> RunConfig:
        raw = self.effective()
        T = raw["T"]
        fine = GridSpec(raw["G_x_min"], raw["G_x_max"], raw["fine_nx"],
                        raw["G_y_min"], raw["G_y_max"], raw["fine_ny"], 0.0, T, raw["fine_nt"])
        inverse = GridSpec(raw["omega_x_min"], raw["omega_x_max"], raw["nx"],
                           raw["omega_y_min"], raw["omega_y_max"], raw["ny"], 0.0, T, raw["nt"])
        phantom = PhantomSpec(
            raw["beta_bg"], raw["gamma_bg"],
            (raw["omega_x_min"], raw["omega_x_max"], raw["omega_y_min"], raw["omega_y_max"]),
            tuple(Inclusion(inc["target"], inc["shape"], tuple(inc["box"]), inc["value"])
                  for inc in raw["inclusions"]),
        )
        return RunConfig(
            scenario=raw["scenario"],
            preset=raw["preset"],
            seed=raw["seed"],
            forward=ForwardSettings(
                grid=fine, substeps=raw["substeps"], d=raw["d"],
                q_S=tuple(raw["q_S"]), q_I=tuple(raw["q_I"]), q_R=tuple(raw["q_R"]),
                rho0=(raw["rho0_S"], raw["rho0_I"], raw["rho0_R"]),
            ),
            phantom=phantom,
            noise=NoiseModel(raw["delta"], raw["seed"]),
            observation=ObservationSettings(inverse, raw["p_sm"], raw["p_sm_space"], raw["c_floor"]),
            inverse=InverseConfig(
                lam=raw["lam"], xi=raw["xi"], kappa_n=raw["kappa_n"], kappa_c=raw["kappa_c"],
                reg_order=raw["reg_order"], stop_tol=raw["stop_tol"], max_iter=raw["max_iter"],
                ls_method=raw["ls_method"], ls_tol=raw["ls_tol"], ls_max_iter=raw["ls_max_iter"],
                seed=raw["seed"],
            ),
            mode=raw["mode"],
            sweep_lambdas=tuple(raw["sweep_lambdas"]),
            sweep_lambda_delta=raw["sweep_lambda_delta"],
            sweep_deltas=tuple(raw["sweep_deltas"]),
            checks=CheckSettings(tuple(raw["check_lambdas"]), raw["check_trials"], raw["carleman_trials"]),
            raw=raw,
        )
