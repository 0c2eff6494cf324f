"""
Ground-truth trajectories for the rigid-body kinematics

    p' = v,   v' = g + R a_B,   R' = R [omega]x

in an NED inertial frame (gravity along +z).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from numpy.typing import NDArray

from .geom3 import as_vec3, cross3, exp_so3, is_rotation, project_to_so3, skew

GRAVITY_NED = np.array([0.0, 0.0, 9.81])
DEFAULT_DT = 1e-3
# R(0) = exp([pi e2]x / 2)
R0_EIGHT = exp_so3([0.0, np.pi / 2.0, 0.0])

TRAJECTORY_KINDS = ("analytic-eight", "constant-velocity", "custom-samples")

Vec3Fn = Callable[[float], NDArray[np.float64]]


def eight_trajectory(t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Eight-shaped reference path and its exact first and second derivatives.

    ``p(t) = [cos 5t, sin(10t)/4, -sqrt(3) sin(10t)/4]``.
    """
    s3 = np.sqrt(3.0)
    c5, s5 = np.cos(5.0 * t), np.sin(5.0 * t)
    c10, s10 = np.cos(10.0 * t), np.sin(10.0 * t)
    p = np.array([c5, s10 / 4.0, -s3 * s10 / 4.0])
    v = np.array([-5.0 * s5, 2.5 * c10, -2.5 * s3 * c10])
    a = np.array([-25.0 * c5, -25.0 * s10, 25.0 * s3 * s10])
    return p, v, a


def angular_velocity_profile(t: float) -> np.ndarray:
    """Body angular velocity in rad/s used with the eight-shaped path."""
    return np.array(
        [
            np.sin(0.3 * t),
            0.7 * np.sin(0.2 * t + np.pi),
            0.5 * np.sin(0.1 * t + np.pi / 3.0),
        ]
    )


def zero_omega(t: float) -> np.ndarray:
    return np.zeros(3)


@dataclass
class TruthState:
    t: float
    p_I: np.ndarray
    v_I: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    a_B: np.ndarray


@dataclass
class TrajectorySpec:
    """
    Description of a ground-truth run.

    ``constant-velocity`` moves along ``p0 + v0 t`` with attitude driven by
    ``omega_fn`` (zero by default). ``custom-samples`` integrates the full
    kinematics from ``p0, v0, R0`` with the supplied ``omega_fn`` and
    ``aB_fn``, sampled at the integrator stage times.
    """

    kind: str = "analytic-eight"
    g_I: np.ndarray = field(default_factory=lambda: GRAVITY_NED.copy())
    R0: np.ndarray = field(default_factory=lambda: R0_EIGHT.copy())
    duration: float = 20.0
    dt: float = DEFAULT_DT
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_fn: Vec3Fn | None = None
    aB_fn: Vec3Fn | None = None

    def validate(self) -> None:
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration >= self.dt:
            raise ValueError("duration must be at least dt")
        if not is_rotation(self.R0):
            raise ValueError("R0 is not a rotation matrix")
        as_vec3(self.g_I)
        if self.kind == "custom-samples" and (self.omega_fn is None or self.aB_fn is None):
            raise ValueError("custom-samples needs omega_fn and aB_fn")

    @property
    def n_samples(self) -> int:
        # guard against 20.0 / 1e-3 = 19999.999...
        return int(np.floor(self.duration / self.dt + 1e-9)) + 1


@dataclass
class TruthRun:
    """Array-backed sequence of :class:`TruthState` on a uniform grid."""

    t: np.ndarray  # (N,)
    p_I: np.ndarray  # (N, 3)
    v_I: np.ndarray  # (N, 3)
    vdot_I: np.ndarray  # (N, 3)
    R: np.ndarray  # (N, 3, 3)
    omega: np.ndarray  # (N, 3)
    a_B: np.ndarray  # (N, 3)
    g_I: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> TruthState:
        return TruthState(
            float(self.t[k]), self.p_I[k], self.v_I[k], self.R[k], self.omega[k], self.a_B[k]
        )

    def __iter__(self) -> Iterator[TruthState]:
        for k in range(len(self)):
            yield self[k]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def index_of(self, t: float) -> int:
        k = int(round((t - self.t[0]) / self.dt))
        if k < 0 or k >= len(self) or abs(self.t[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the run grid")
        return k

    def to_csv(self, path: str | Path, stride: int = 1) -> None:
        """Write ``t, p_I(3), v_I(3), R row-major(9), omega(3), a_B(3)``."""
        header = (
            ["t"]
            + [f"p_I_{i}" for i in range(3)]
            + [f"v_I_{i}" for i in range(3)]
            + [f"R_{i}{j}" for i in range(3) for j in range(3)]
            + [f"omega_{i}" for i in range(3)]
            + [f"a_B_{i}" for i in range(3)]
        )
        with open(path, "w", newline="") as fh:
            fh.write("# ltvins truth v1\n")
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(0, len(self), stride):
                row = np.concatenate(
                    [[self.t[k]], self.p_I[k], self.v_I[k], self.R[k].reshape(-1), self.omega[k], self.a_B[k]]
                )
                w.writerow([f"{x:.17g}" for x in row])


_GAUSS_OFF = np.sqrt(3.0) / 6.0


def magnus_step(R: np.ndarray, omega_fn: Vec3Fn, t: float, h: float) -> np.ndarray:
    """
    Advance ``R' = R [omega]x`` by ``h`` with the fourth-order Magnus update.

    The increment is ``exp([h/2 (w1 + w2) + sqrt(3)/12 h^2 (w1 x w2)]x)``
    with ``w1, w2`` sampled at the two Gauss points of the step.
    """
    w1 = omega_fn(t + (0.5 - _GAUSS_OFF) * h)
    w2 = omega_fn(t + (0.5 + _GAUSS_OFF) * h)
    theta = 0.5 * h * (w1 + w2) + (np.sqrt(3.0) / 12.0) * h * h * cross3(w1, w2)
    return R @ exp_so3(theta)


def integrate_kinematics(
    s: TruthState,
    omega_fn: Vec3Fn,
    aB_fn: Vec3Fn,
    dt: float,
    g_I: np.ndarray = GRAVITY_NED,
) -> TruthState:
    """
    One fourth-order step of the rigid-body kinematics.

    Attitude moves on the group with :func:`magnus_step`; the translational
    part is a classical RK4 step whose stages use the attitude at
    ``t``, ``t + dt/2`` and ``t + dt``. The attitude is re-projected onto
    SO(3) after the step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t = s.t
    R_mid = magnus_step(s.R, omega_fn, t, 0.5 * dt)
    R_end = magnus_step(s.R, omega_fn, t, dt)
    acc0 = g_I + s.R @ aB_fn(t)
    accm = g_I + R_mid @ aB_fn(t + 0.5 * dt)
    acc1 = g_I + R_end @ aB_fn(t + dt)
    # v' depends on time only, so its RK4 stages reduce to Simpson weights
    k1v, k2v, k3v, k4v = acc0, accm, accm, acc1
    k1p = s.v_I
    k2p = s.v_I + 0.5 * dt * k1v
    k3p = s.v_I + 0.5 * dt * k2v
    k4p = s.v_I + dt * k3v
    v_new = s.v_I + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    p_new = s.p_I + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    R_new, _ = project_to_so3(R_end)
    return TruthState(t + dt, p_new, v_new, R_new, omega_fn(t + dt), aB_fn(t + dt))


def _integrate_attitude(R0: np.ndarray, omega_fn: Vec3Fn, t: np.ndarray) -> np.ndarray:
    Rs = np.empty((len(t), 3, 3))
    Rs[0] = R0
    R = R0
    for k in range(1, len(t)):
        R, _ = project_to_so3(magnus_step(R, omega_fn, t[k - 1], t[k] - t[k - 1]))
        Rs[k] = R
    return Rs


def generate_run(spec: TrajectorySpec) -> TruthRun:
    """Sample a full ground-truth run on the grid ``k * spec.dt``."""
    spec.validate()
    g = as_vec3(spec.g_I)
    n = spec.n_samples
    t = np.arange(n) * spec.dt

    if spec.kind == "custom-samples":
        omega_fn, aB_fn = spec.omega_fn, spec.aB_fn
        s = TruthState(0.0, as_vec3(spec.p0), as_vec3(spec.v0), np.array(spec.R0, float), omega_fn(0.0), aB_fn(0.0))
        states = [s]
        for k in range(1, n):
            s = integrate_kinematics(s, omega_fn, aB_fn, spec.dt, g)
            s.t = t[k]
            states.append(s)
        R = np.array([s.R for s in states])
        a_B = np.array([s.a_B for s in states])
        vdot = g + np.einsum("nij,nj->ni", R, a_B)
        return TruthRun(
            t,
            np.array([s.p_I for s in states]),
            np.array([s.v_I for s in states]),
            vdot,
            R,
            np.array([s.omega for s in states]),
            a_B,
            g,
        )

    if spec.kind == "analytic-eight":
        omega_fn = spec.omega_fn or angular_velocity_profile
        pva = [eight_trajectory(tk) for tk in t]
        p = np.array([x[0] for x in pva])
        v = np.array([x[1] for x in pva])
        vdot = np.array([x[2] for x in pva])
    else:  # constant-velocity
        omega_fn = spec.omega_fn or zero_omega
        p = as_vec3(spec.p0) + np.outer(t, as_vec3(spec.v0))
        v = np.tile(as_vec3(spec.v0), (n, 1))
        vdot = np.zeros((n, 3))

    R = _integrate_attitude(np.array(spec.R0, float), omega_fn, t)
    omega = np.array([omega_fn(tk) for tk in t])
    # a_B = R^T (vdot - g)
    a_B = np.einsum("nji,nj->ni", R, vdot - g)
    return TruthRun(t, p, v, vdot, R, omega, a_B, g)
