"""
Synthetic sensor outputs.

Body-frame vector measurements ``y_i = R^T (r_i - beta_i p)``, inertial
position fixes ``y_i = p + R b_i``, inertial and body-frame velocity, a
magnetometer (a ``beta = 0`` vector measurement of ``mag_field_I``) and the
IMU pair ``(omega, a_B)``.

Noise is additive Gaussian with a per-axis variance of ``power / dt``: the
discrete counterpart of white noise with two-sided spectral density
``power``. Each sensor draws from its own generator so toggling one sensor
never shifts another's noise sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geom3 import as_vec3
from .truth import TruthState

# Stream offsets combined with the config seed
_STREAMS = {"gyro": 1, "accel": 2, "landmark": 3, "gps": 4, "vel_I": 5, "vel_B": 6, "mag": 7}


@dataclass
class NoisePowers:
    """Noise power (two-sided PSD, unit^2 s) per sensor; zero disables."""

    gyro: float = 0.0
    accel: float = 0.0
    landmark: float = 0.0
    gps: float = 0.0
    vel_I: float = 0.0
    vel_B: float = 0.0
    mag: float = 0.0

    def scaled(self, factor: float) -> "NoisePowers":
        return NoisePowers(**{k: v * factor for k, v in self.__dict__.items()})


@dataclass
class SensorConfig:
    landmarks: list[np.ndarray] = field(default_factory=list)
    betas: list[int] = field(default_factory=list)
    gps_lever_arms: list[np.ndarray] = field(default_factory=list)
    has_inertial_velocity: bool = False
    has_body_velocity: bool = False
    has_magnetometer: bool = False
    mag_field_I: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0))
    noise: NoisePowers = field(default_factory=NoisePowers)
    seed: int = 0

    def __post_init__(self) -> None:
        self.landmarks = [as_vec3(r) for r in self.landmarks]
        self.gps_lever_arms = [as_vec3(b) for b in self.gps_lever_arms]
        self.mag_field_I = as_vec3(self.mag_field_I)
        if not self.betas:
            self.betas = [1] * len(self.landmarks)
        self.betas = [int(b) for b in self.betas]
        self.validate()

    def validate(self) -> None:
        if len(self.betas) != len(self.landmarks):
            raise ValueError("one beta per landmark is required")
        if any(b not in (0, 1) for b in self.betas):
            raise ValueError("beta must be 0 or 1")
        if not (
            self.landmarks
            or self.gps_lever_arms
            or self.has_inertial_velocity
            or self.has_body_velocity
            or self.has_magnetometer
        ):
            raise ValueError("at least one measurement source must be enabled")
        if any(p < 0 for p in self.noise.__dict__.values()):
            raise ValueError("noise powers must be nonnegative")

    @property
    def alpha_m(self) -> int:
        return int(self.has_magnetometer)

    @property
    def alpha_v(self) -> int:
        return int(self.has_inertial_velocity)

    def without_noise(self) -> "SensorConfig":
        return replace(self, noise=NoisePowers())


@dataclass
class MeasurementBundle:
    t: float
    y_landmarks: list[np.ndarray]
    y_gps: list[np.ndarray]
    y_vel_I: np.ndarray | None
    y_vel_B: np.ndarray | None
    y_mag: np.ndarray | None
    omega_meas: np.ndarray
    aB_meas: np.ndarray


@dataclass
class NoiseSample:
    """One step's worth of additive noise for every enabled sensor."""

    gyro: np.ndarray
    accel: np.ndarray
    landmarks: np.ndarray  # (p, 3)
    gps: np.ndarray  # (q, 3)
    vel_I: np.ndarray
    vel_B: np.ndarray
    mag: np.ndarray


def add_noise(x: np.ndarray, power: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Return ``x + w`` with ``w ~ N(0, power / dt)`` per axis."""
    if power < 0:
        raise ValueError("noise power must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if power == 0.0:
        return x.copy()
    return x + rng.normal(0.0, np.sqrt(power / dt), size=x.shape)


class NoiseSource:
    """Per-sensor random streams for one run."""

    def __init__(self, cfg: SensorConfig, dt: float) -> None:
        self.cfg = cfg
        self.dt = dt
        self.rngs = {k: np.random.default_rng([cfg.seed, off]) for k, off in _STREAMS.items()}

    def draw(self) -> NoiseSample:
        cfg, n, dt = self.cfg, self.cfg.noise, self.dt
        z3 = np.zeros(3)

        def d(name: str, shape) -> np.ndarray:
            return add_noise(np.zeros(shape), getattr(n, name), dt, self.rngs[name])

        return NoiseSample(
            gyro=d("gyro", 3),
            accel=d("accel", 3),
            landmarks=d("landmark", (len(cfg.landmarks), 3)),
            gps=d("gps", (len(cfg.gps_lever_arms), 3)),
            vel_I=d("vel_I", 3) if cfg.has_inertial_velocity else z3,
            vel_B=d("vel_B", 3) if cfg.has_body_velocity else z3,
            mag=d("mag", 3) if cfg.has_magnetometer else z3,
        )


def measure_epoch(s: TruthState, cfg: SensorConfig, noise: NoiseSample | None = None) -> MeasurementBundle:
    """
    Evaluate every configured output at the true state ``s``.

    ``noise`` is added when given; otherwise the bundle is exact.
    """
    R, p, v = s.R, s.p_I, s.v_I
    Rt = R.T
    y_l = [Rt @ (r - b * p) for r, b in zip(cfg.landmarks, cfg.betas)]
    y_g = [p + R @ b for b in cfg.gps_lever_arms]
    y_vI = v.copy() if cfg.has_inertial_velocity else None
    y_vB = Rt @ v if cfg.has_body_velocity else None
    y_m = Rt @ cfg.mag_field_I if cfg.has_magnetometer else None
    omega, a_B = s.omega.copy(), s.a_B.copy()
    if noise is not None:
        y_l = [y + w for y, w in zip(y_l, noise.landmarks)]
        y_g = [y + w for y, w in zip(y_g, noise.gps)]
        if y_vI is not None:
            y_vI = y_vI + noise.vel_I
        if y_vB is not None:
            y_vB = y_vB + noise.vel_B
        if y_m is not None:
            y_m = y_m + noise.mag
        omega = omega + noise.gyro
        a_B = a_B + noise.accel
    return MeasurementBundle(s.t, y_l, y_g, y_vI, y_vB, y_m, omega, a_B)


STEREO_LANDMARKS = [
    [2.0, 0.0, 0.0],
    [0.0, 0.4, 0.0],
    [0.0, 0.0, 0.5],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
]
MAG_FIELD = [1.0 / np.sqrt(2.0), 0.0, 1.0 / np.sqrt(2.0)]
IMU_NOISE_POWER = 1e-1
MAG_NOISE_POWER = 1e-1
STEREO_NOISE_POWER = 5e-2


def reference_sensor_suite(
    kind: str,
    *,
    inertial_velocity: bool = True,
    magnetometer: bool = True,
    seed: int = 0,
) -> SensorConfig:
    """Landmark (``"stereo"``) or GPS (``"gps"``) sensor suite of the reference experiments."""
    if kind == "stereo":
        return SensorConfig(
            landmarks=STEREO_LANDMARKS,
            betas=[1] * 5,
            noise=NoisePowers(gyro=IMU_NOISE_POWER, accel=IMU_NOISE_POWER, landmark=STEREO_NOISE_POWER),
            seed=seed,
        )
    if kind == "gps":
        return SensorConfig(
            gps_lever_arms=[np.zeros(3)],
            has_inertial_velocity=inertial_velocity,
            has_magnetometer=magnetometer,
            mag_field_I=MAG_FIELD,
            noise=NoisePowers(gyro=IMU_NOISE_POWER, accel=IMU_NOISE_POWER, mag=MAG_NOISE_POWER),
            seed=seed,
        )
    raise ValueError(f"unknown config kind {kind!r}")
