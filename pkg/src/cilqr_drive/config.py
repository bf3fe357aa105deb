"""Run configuration: dotted-key files, typed overrides, validation.

A configuration is a plain text file of ``section.key = value`` lines.
Sections mirror the library surface: vehicle.*, lateral.*,
longitudinal.*, vpc.*, sim.*, and scenario.*.  Every key is checked
against a registry; unknown keys, duplicate keys, and type or range
violations are reported with the file name and line number.  Values not
mentioned keep the published defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

from .lanes import VpcConfig
from .lateral import LateralTuning, VehicleParams
from .longitudinal import LongTuning
from .sim import LeadSpec, NoiseConfig, ScenarioSpec, SimRates
from .sim.scenario import CONTROLLERS

TRACK_PRESETS = ("trackA", "trackB", "straight", "circle100")

KPH = 1.0 / 3.6    # km/h to m/s


class ConfigError(ValueError):
    """Configuration rejected; message carries file and line."""

    def __init__(self, message: str, source: str = "", line: int = 0):
        self.source = source
        self.line = line
        if source and line:
            message = f"{source}:{line}: {message}"
        elif source:
            message = f"{source}: {message}"
        super().__init__(message)


def _as_float(raw: str) -> float:
    return float(raw)


def _as_int(raw: str) -> int:
    # reject silent truncation of e.g. "3.5"
    if not raw.lstrip("+-").isdigit():
        raise ValueError(f"expected an integer, got {raw!r}")
    return int(raw)


def _as_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _as_str(raw: str) -> str:
    return raw


def _positive(x) -> None:
    if not x > 0:
        raise ValueError("must be strictly positive")


def _nonnegative(x) -> None:
    if x < 0:
        raise ValueError("must be nonnegative")


def _choice(*allowed: str):
    def check(x) -> None:
        if x not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
    return check


def _no_check(_x) -> None:
    return None


# key -> (cast, range check); the assembly step below consumes every key
_REGISTRY = {
    "scenario.track": (_as_str, _choice(*TRACK_PRESETS)),
    "scenario.duration_s": (_as_float, _positive),
    "scenario.laps": (_as_float, _positive),
    "scenario.cruise_speed_kph": (_as_float, _positive),
    "scenario.start_s": (_as_float, _nonnegative),
    "scenario.start_delta": (_as_float, _no_check),
    "scenario.start_theta": (_as_float, _no_check),
    "scenario.start_speed_kph": (_as_float, _nonnegative),
    "scenario.seed": (_as_int, _nonnegative),
    "scenario.controller": (_as_str, _choice(*CONTROLLERS)),
    "scenario.longitudinal": (_as_bool, _no_check),
    "scenario.name": (_as_str, _no_check),
    "scenario.metrics_t_start": (_as_float, _nonnegative),
    "scenario.metrics_t_end": (_as_float, _positive),
    "scenario.lead": (_as_bool, _no_check),
    "scenario.lead_gap_m": (_as_float, _positive),
    "scenario.lead_speed_kph": (_as_float, _positive),
    "scenario.lead_amplitude_kph": (_as_float, _nonnegative),
    "scenario.lead_period_s": (_as_float, _positive),
    "vehicle.mass": (_as_float, _positive),
    "vehicle.c_alpha_f": (_as_float, _positive),
    "vehicle.c_alpha_r": (_as_float, _positive),
    "vehicle.l_f": (_as_float, _positive),
    "vehicle.l_r": (_as_float, _positive),
    "vehicle.i_z": (_as_float, _positive),
    "lateral.horizon": (_as_int, _positive),
    "lateral.dt": (_as_float, _positive),
    "lateral.q_delta": (_as_float, _nonnegative),
    "lateral.q_delta_rate": (_as_float, _nonnegative),
    "lateral.q_theta": (_as_float, _nonnegative),
    "lateral.q_theta_rate": (_as_float, _nonnegative),
    "lateral.r_steer": (_as_float, _positive),
    "lateral.steer_limit_rad": (_as_float, _positive),
    "lateral.centering_weight": (_as_float, _nonnegative),
    "lateral.centering_rate": (_as_float, _nonnegative),
    "longitudinal.horizon": (_as_int, _positive),
    "longitudinal.dt": (_as_float, _positive),
    "longitudinal.d_ref": (_as_float, _positive),
    "longitudinal.q_d": (_as_float, _nonnegative),
    "longitudinal.q_v": (_as_float, _nonnegative),
    "longitudinal.q_a": (_as_float, _nonnegative),
    "longitudinal.r_jerk": (_as_float, _positive),
    "longitudinal.jerk_limit": (_as_float, _positive),
    "longitudinal.accel_limit": (_as_float, _positive),
    "longitudinal.d_critical": (_as_float, _positive),
    "longitudinal.d_floor": (_as_float, _positive),
    "vpc.lookahead_l": (_as_float, _positive),
    "vpc.k_vpc": (_as_float, _positive),
    "vpc.frame_window": (_as_int, _positive),
    "sim.plant_us": (_as_int, _positive),
    "sim.perception_us": (_as_int, _positive),
    "sim.vpc_us": (_as_int, _positive),
    "sim.planner_us": (_as_int, _positive),
    "sim.perception_latency_us": (_as_int, _nonnegative),
    "sim.actuation_latency_us": (_as_int, _nonnegative),
    "sim.sigma_theta": (_as_float, _nonnegative),
    "sim.sigma_delta": (_as_float, _nonnegative),
    "sim.sigma_lane": (_as_float, _nonnegative),
}


@dataclass
class RunConfig:
    """Everything one scenario run needs, fully validated."""

    spec: ScenarioSpec
    controller: str = "cilqr"
    longitudinal: bool = False
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    lateral: LateralTuning = field(default_factory=LateralTuning)
    long_tuning: LongTuning = field(default_factory=LongTuning)
    vpc: VpcConfig = field(default_factory=VpcConfig)
    source: str = ""

    def differs_only_in_controller(self, other: "RunConfig") -> bool:
        """True when everything but the controller and labels matches."""
        mine, theirs = asdict(self), asdict(other)
        for skip in ("controller", "source"):
            mine.pop(skip)
            theirs.pop(skip)
        mine["spec"].pop("name")
        theirs["spec"].pop("name")
        return mine == theirs


def _parse_lines(text: str, source: str) -> dict[str, tuple[object, int]]:
    """Tokenize, type, and range-check one config text."""
    values: dict[str, tuple[object, int]] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}",
                              source, lineno)
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _REGISTRY:
            raise ConfigError(f"unknown key {key!r}", source, lineno)
        if key in values:
            first = values[key][1]
            raise ConfigError(f"duplicate key {key!r} (first set on line "
                              f"{first})", source, lineno)
        cast, check = _REGISTRY[key]
        try:
            value = cast(raw)
            check(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", source, lineno) from None
        values[key] = (value, lineno)
    return values


def _build(values: dict[str, tuple[object, int]], source: str) -> RunConfig:
    def get(key, default=None):
        return values[key][0] if key in values else default

    def line_of(*keys) -> int:
        for key in keys:
            if key in values:
                return values[key][1]
        return 0

    vehicle = VehicleParams(
        m=get("vehicle.mass", 1150.0),
        c_alpha_f=get("vehicle.c_alpha_f", 80000.0),
        c_alpha_r=get("vehicle.c_alpha_r", 80000.0),
        l_f=get("vehicle.l_f", 1.27),
        l_r=get("vehicle.l_r", 1.37),
        i_z=get("vehicle.i_z", 2000.0))

    lat_default = LateralTuning()
    lateral = LateralTuning(
        horizon=get("lateral.horizon", lat_default.horizon),
        dt=get("lateral.dt", lat_default.dt),
        q_diag=(get("lateral.q_delta", lat_default.q_diag[0]),
                get("lateral.q_delta_rate", lat_default.q_diag[1]),
                get("lateral.q_theta", lat_default.q_diag[2]),
                get("lateral.q_theta_rate", lat_default.q_diag[3])),
        r=get("lateral.r_steer", lat_default.r),
        steer_limit=get("lateral.steer_limit_rad", lat_default.steer_limit),
        centering_weight=get("lateral.centering_weight",
                             lat_default.centering_weight),
        centering_rate=get("lateral.centering_rate",
                           lat_default.centering_rate))

    lon_default = LongTuning()
    try:
        long_tuning = LongTuning(
            horizon=get("longitudinal.horizon", lon_default.horizon),
            dt=get("longitudinal.dt", lon_default.dt),
            d_ref=get("longitudinal.d_ref", lon_default.d_ref),
            q_diag=(get("longitudinal.q_d", lon_default.q_diag[0]),
                    get("longitudinal.q_v", lon_default.q_diag[1]),
                    get("longitudinal.q_a", lon_default.q_diag[2])),
            r=get("longitudinal.r_jerk", lon_default.r),
            jerk_limit=get("longitudinal.jerk_limit",
                           lon_default.jerk_limit),
            accel_limit=get("longitudinal.accel_limit",
                            lon_default.accel_limit),
            d_critical=get("longitudinal.d_critical",
                           lon_default.d_critical),
            d_floor=get("longitudinal.d_floor", lon_default.d_floor))
    except ValueError as exc:
        raise ConfigError(
            f"longitudinal.*: {exc}",
            source, line_of("longitudinal.d_critical", "longitudinal.d_floor",
                            "longitudinal.d_ref")) from None

    vpc = VpcConfig(
        lookahead_L=get("vpc.lookahead_l", 10.0),
        k_vpc=get("vpc.k_vpc", 2.64),
        frame_window=get("vpc.frame_window", 8))

    noise = NoiseConfig(
        sigma_theta=get("sim.sigma_theta", 0.0),
        sigma_delta=get("sim.sigma_delta", 0.0),
        sigma_lane=get("sim.sigma_lane", 0.0))

    rates_default = SimRates()
    try:
        rates = SimRates(
            plant_us=get("sim.plant_us", rates_default.plant_us),
            perception_us=get("sim.perception_us",
                              rates_default.perception_us),
            vpc_us=get("sim.vpc_us", rates_default.vpc_us),
            planner_us=get("sim.planner_us", rates_default.planner_us),
            perception_latency_us=get("sim.perception_latency_us",
                                      rates_default.perception_latency_us),
            actuation_latency_us=get("sim.actuation_latency_us",
                                     rates_default.actuation_latency_us))
    except ValueError as exc:
        raise ConfigError(f"sim.*: {exc}", source,
                          line_of("sim.plant_us")) from None

    lead = None
    lead_keys = [k for k in values
                 if k.startswith("scenario.lead_")]
    if get("scenario.lead", False):
        lead = LeadSpec(
            initial_gap=get("scenario.lead_gap_m", 35.0),
            base_speed=get("scenario.lead_speed_kph", 63.5) * KPH,
            amplitude=get("scenario.lead_amplitude_kph", 0.0) * KPH,
            period_s=get("scenario.lead_period_s", 20.0))
    elif lead_keys:
        raise ConfigError(f"{lead_keys[0]} requires scenario.lead = true",
                          source, values[lead_keys[0]][1])

    metrics_range = None
    has_start = "scenario.metrics_t_start" in values
    has_end = "scenario.metrics_t_end" in values
    if has_start != has_end:
        raise ConfigError(
            "scenario.metrics_t_start and scenario.metrics_t_end must be "
            "given together", source,
            line_of("scenario.metrics_t_start", "scenario.metrics_t_end"))
    if has_start:
        lo = get("scenario.metrics_t_start")
        hi = get("scenario.metrics_t_end")
        if hi <= lo:
            raise ConfigError("scenario.metrics_t_end must exceed "
                              "scenario.metrics_t_start", source,
                              line_of("scenario.metrics_t_end"))
        metrics_range = (lo, hi)

    start_kph = get("scenario.start_speed_kph")
    try:
        spec = ScenarioSpec(
            track=get("scenario.track", "straight"),
            duration_s=get("scenario.duration_s"),
            laps=get("scenario.laps"),
            cruise_speed=get("scenario.cruise_speed_kph", 76.0) * KPH,
            start_s=get("scenario.start_s", 0.0),
            start_delta=get("scenario.start_delta", 0.0),
            start_theta=get("scenario.start_theta", 0.0),
            start_v=None if start_kph is None else start_kph * KPH,
            lead=lead,
            noise=noise,
            rates=rates,
            seed=get("scenario.seed", 0),
            metrics_t_range=metrics_range,
            name=get("scenario.name", ""))
    except ValueError as exc:
        raise ConfigError(f"scenario.*: {exc}", source,
                          line_of("scenario.duration_s", "scenario.laps",
                                  "scenario.track")) from None

    return RunConfig(
        spec=spec,
        controller=get("scenario.controller", "cilqr"),
        longitudinal=get("scenario.longitudinal", False),
        vehicle=vehicle,
        lateral=lateral,
        long_tuning=long_tuning,
        vpc=vpc,
        source=source)


def load_run_config(path: str | Path,
                    overrides: tuple[str, ...] = (),
                    seed: int | None = None,
                    controller: str | None = None) -> RunConfig:
    """Read a config file, apply --set/--seed/--controller overrides.

    Overrides are 'dotted.key=value' strings checked against the same
    registry as file keys; they replace file values.  seed and
    controller, when given, win over both.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    values = _parse_lines(path.read_text(), str(path))

    for i, pair in enumerate(overrides, start=1):
        if "=" not in pair:
            raise ConfigError(f"--set #{i}: expected key=value, got {pair!r}",
                              str(path))
        key, _, raw = pair.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _REGISTRY:
            raise ConfigError(f"--set #{i}: unknown key {key!r}", str(path))
        cast, check = _REGISTRY[key]
        try:
            value = cast(raw)
            check(value)
        except ValueError as exc:
            raise ConfigError(f"--set #{i}: {key}: {exc}",
                              str(path)) from None
        values[key] = (value, values.get(key, (None, 0))[1])

    if seed is not None:
        values["scenario.seed"] = (seed, 0)
    if controller is not None:
        if controller not in CONTROLLERS:
            raise ConfigError(f"--controller must be one of "
                              f"{', '.join(CONTROLLERS)}", str(path))
        values["scenario.controller"] = (controller, 0)

    return _build(values, str(path))
