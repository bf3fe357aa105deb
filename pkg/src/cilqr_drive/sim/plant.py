"""Nonlinear single-track plant in road coordinates.

The controllers see linear prediction models; the plant keeps the
nonlinearities they neglect (trig kinematics, slip-angle tires, the
curvature coupling of the road frame), which is exactly the mismatch a
closed-loop check is for.  Integration is fixed-step RK4 in pure float
arithmetic to keep the 1 ms loop cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..lateral import VehicleParams
from .track import TrackGeometry

ACCEL_GAIN = 5.0        # accel_cmd in [-1, 1] maps to +/- 5 m/s^2
BRAKE_GAIN = 8.0        # brake_cmd in [0, 1] adds up to -8 m/s^2
OFF_TRACK_M = 10.0
_V_SLIP_MIN = 0.5       # below this speed slip angles are meaningless


class OffTrackError(RuntimeError):
    """Ego left the drivable corridor (|delta| at or past the limit)."""


@dataclass
class PlantState:
    """Ground-truth vehicle state in road coordinates."""

    s: float = 0.0
    delta: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    yaw_rate: float = 0.0
    v_lat: float = 0.0
    a: float = 0.0

    def __post_init__(self) -> None:
        vals = (self.s, self.delta, self.theta, self.v,
                self.yaw_rate, self.v_lat, self.a)
        if not all(math.isfinite(x) for x in vals):
            raise ValueError("plant state must be finite")
        if self.v < 0.0:
            raise ValueError("speed must be nonnegative")


def _derivatives(s, delta, theta, v, yaw_rate, v_lat,
                 steer, accel, track: TrackGeometry,
                 params: VehicleParams):
    kappa = track.curvature(s)
    if v >= _V_SLIP_MIN:
        alpha_f = steer - math.atan((v_lat + params.l_f * yaw_rate) / v)
        alpha_r = -math.atan((v_lat - params.l_r * yaw_rate) / v)
        fyf = 2.0 * params.c_alpha_f * alpha_f
        fyr = 2.0 * params.c_alpha_r * alpha_r
        cos_steer = math.cos(steer)
        dv_lat = (fyf * cos_steer + fyr) / params.m - v * yaw_rate
        dyaw = (params.l_f * fyf * cos_steer
                - params.l_r * fyr) / params.i_z
    else:
        dv_lat = -v_lat * 10.0   # crawl regime: bleed lateral motion
        dyaw = -yaw_rate * 10.0
    denom = 1.0 - kappa * delta
    if abs(denom) < 1e-6:
        denom = math.copysign(1e-6, denom)
    ct, st = math.cos(theta), math.sin(theta)
    ds = (v * ct - v_lat * st) / denom
    ddelta = v * st + v_lat * ct
    dtheta = yaw_rate - kappa * ds
    dv = accel if v > 0.0 or accel > 0.0 else 0.0
    return ds, ddelta, dtheta, dv, dyaw, dv_lat


def step_plant(state: PlantState, steer_rad: float, accel_cmd: float,
               brake_cmd: float, dt: float, track: TrackGeometry,
               params: VehicleParams | None = None) -> PlantState:
    """Advance the plant one RK4 step of dt seconds.

    steer_rad is the road-wheel angle; accel_cmd and brake_cmd are the
    normalized pedal commands, mapped linearly to accelerations.
    Raises OffTrackError when the lateral offset reaches the corridor
    limit.
    """
    if dt <= 0.0 or dt > 0.002:
        raise ValueError("plant step must be in (0, 2] ms")
    params = params or VehicleParams()
    accel = (ACCEL_GAIN * min(max(accel_cmd, -1.0), 1.0)
             - BRAKE_GAIN * min(max(brake_cmd, 0.0), 1.0))

    y0 = (state.s, state.delta, state.theta, state.v,
          state.yaw_rate, state.v_lat)

    def f(y):
        return _derivatives(*y, steer_rad, accel, track, params)

    k1 = f(y0)
    k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y0, k1)))
    k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y0, k2)))
    k4 = f(tuple(a + dt * b for a, b in zip(y0, k3)))
    s, delta, theta, v, yaw_rate, v_lat = (
        a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y0, k1, k2, k3, k4))

    if v < 0.0:
        v = 0.0
    if abs(delta) >= OFF_TRACK_M:
        raise OffTrackError(f"lateral offset {delta:.2f} m at s = {s:.1f} m")
    return PlantState(s=s, delta=delta, theta=theta, v=v,
                      yaw_rate=yaw_rate, v_lat=v_lat, a=accel)
