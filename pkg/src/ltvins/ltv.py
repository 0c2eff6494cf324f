"""
Body-frame linear time-varying model.

State ``x = [p_B; v_B; z]`` with ``p_B = R^T p``, ``v_B = R^T v`` and
``z = vec(R^T)``. Dynamics ``x' = A(t) x + B a_B`` with

    A = Abar (x) I3 + S,   S = -I5 (x) [omega]x,   B = [0 1 0 0 0]^T (x) I3

and an output stack ``y = C(t) x``, ``C = Cbar (x) I3`` apart from the
optional magnetometer/GPS cross rows, which are stored densely.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .geom3 import cross3, kron, skew, vec
from .sensors import MeasurementBundle, SensorConfig

N_STATE = 15
I3 = np.eye(3)

_B = kron(np.array([[0.0], [1.0], [0.0], [0.0], [0.0]]), I3)
_B.setflags(write=False)

XI_TOL = 1e-9


@dataclass(frozen=True)
class OutputOptions:
    use_stereo_virtual: bool = False
    use_mag_cross: bool = False


@dataclass
class OutputVector:
    y: np.ndarray
    row_labels: list[str]

    @property
    def kron_form(self) -> bool:
        return "mag-cross" not in self.row_labels


@dataclass
class LtvMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Abar: np.ndarray
    Cbar: np.ndarray
    S: np.ndarray


def pack_state(p_B, v_B, R) -> np.ndarray:
    return np.concatenate([np.asarray(p_B, float), np.asarray(v_B, float), vec(np.asarray(R, float).T)])


def unpack_state(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``x`` into ``(p_B, v_B, z)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (N_STATE,):
        raise ValueError(f"expected a 15-vector, got shape {x.shape}")
    return x[0:3], x[3:6], x[6:15]


def state_from_pose(p_I, v_I, R) -> np.ndarray:
    R = np.asarray(R, float)
    return pack_state(R.T @ p_I, R.T @ v_I, R)


def transform_T(R: np.ndarray) -> np.ndarray:
    """``T = I5 (x) R``; maps the body-frame state to ``[p; v; vec(I3)]``."""
    return kron(np.eye(5), R)


def build_Abar(g_I) -> np.ndarray:
    Abar = np.zeros((5, 5))
    Abar[0, 1] = 1.0
    Abar[1, 2:5] = np.asarray(g_I, float)
    return Abar


def build_A(omega, g_I) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(A, Abar, S)`` for the given angular velocity and gravity."""
    Abar = build_Abar(g_I)
    S = -kron(np.eye(5), skew(omega))
    return kron(Abar, I3) + S, Abar, S


def build_B() -> np.ndarray:
    return _B.copy()


def stereo_virtual_output(y1, y2, y3, r1, r2, r3) -> tuple[np.ndarray, np.ndarray]:
    """
    Cross-product output built from three landmark measurements.

    Returns ``(y_virtual, xi)`` with ``y_virtual = (y1 - y2) x (y1 - y3)`` and
    ``xi = (r1 - r2) x (r1 - r3)``; noise-free, ``y_virtual = R^T xi``.
    """
    y1, y2, y3 = (np.asarray(a, float) for a in (y1, y2, y3))
    r1, r2, r3 = (np.asarray(a, float) for a in (r1, r2, r3))
    return cross3(y1 - y2, y1 - y3), cross3(r1 - r2, r1 - r3)


def virtual_triple(cfg: SensorConfig, tol: float = XI_TOL) -> tuple[int, int, int] | None:
    """First non-aligned triple of ``beta = 1`` landmarks in index order, if any."""
    pts = np.asarray(cfg.landmarks, dtype=float).reshape(-1, 3)
    return _virtual_triple(pts.tobytes(), tuple(cfg.betas), tol)


@lru_cache(maxsize=64)
def _virtual_triple(raw: bytes, betas, tol):
    idx = [i for i, b in enumerate(betas) if b == 1]
    pts = np.frombuffer(raw, dtype=float).reshape(-1, 3)
    for i, j, k in combinations(idx, 3):
        xi = np.cross(pts[i] - pts[j], pts[i] - pts[k])
        scale = max(np.linalg.norm(pts[i] - pts[j]) * np.linalg.norm(pts[i] - pts[k]), 1.0)
        if np.linalg.norm(xi) > tol * scale:
            return (i, j, k)
    return None


def mag_cross_output(y_mag, y_gps, r1_I, lever_arm=None) -> tuple[np.ndarray, np.ndarray]:
    """
    Dense 3x15 output block coupling the magnetometer and a GPS fix.

    ``[y_mag]x p_B - ((r1 x y_gps)^T (x) I3) z = -[y_mag]x b``; the right-hand
    side vanishes for a zero lever arm.
    """
    if y_mag is None or y_gps is None:
        raise ValueError("mag-cross output needs both a magnetometer and a GPS fix")
    y_mag = np.asarray(y_mag, float)
    row = np.zeros((3, N_STATE))
    row[:, 0:3] = skew(y_mag)
    row[:, 6:15] = -kron(cross3(r1_I, y_gps)[None, :], I3)
    b = np.zeros(3) if lever_arm is None else np.asarray(lever_arm, float)
    return row, -cross3(y_mag, b)


def build_C(
    bundle: MeasurementBundle,
    cfg: SensorConfig,
    opts: OutputOptions = OutputOptions(),
) -> tuple[np.ndarray, np.ndarray, OutputVector]:
    """
    Assemble the output matrix and the artificial output vector for one epoch.

    Row blocks, in order: landmarks, magnetometer, GPS fixes, inertial
    velocity, body velocity, virtual cross output, magnetometer/GPS cross.

    Returns
    -------
    C : ndarray, shape (m, 15)
    Cbar : ndarray, shape (m_kron / 3, 5)
        Reduced matrix for every row except the mag-cross block.
    out : OutputVector
    """
    if len(bundle.y_landmarks) != len(cfg.landmarks) or len(bundle.y_gps) != len(cfg.gps_lever_arms):
        raise ValueError("bundle does not match the sensor configuration")
    for present, flag, name in (
        (bundle.y_vel_I, cfg.has_inertial_velocity, "inertial velocity"),
        (bundle.y_vel_B, cfg.has_body_velocity, "body velocity"),
        (bundle.y_mag, cfg.has_magnetometer, "magnetometer"),
    ):
        if (present is not None) != flag:
            raise ValueError(f"{name} availability does not match the configuration")

    n_l, n_g = len(cfg.landmarks), len(cfg.gps_lever_arms)
    tri = None
    if opts.use_stereo_virtual:
        tri = virtual_triple(cfg)
        if tri is None:
            raise ValueError("virtual output requested but no non-aligned landmark triple exists")
    n_rows = (
        n_l + n_g + cfg.has_magnetometer + cfg.has_inertial_velocity
        + cfg.has_body_velocity + (tri is not None)
    )
    Cbar = np.zeros((n_rows, 5))
    y = np.zeros(3 * n_rows)
    labels: list[str] = []
    k = 0

    for i, (r, b, yi) in enumerate(zip(cfg.landmarks, cfg.betas, bundle.y_landmarks)):
        Cbar[k, 0], Cbar[k, 2:] = -b, r
        y[3 * k : 3 * k + 3] = yi
        labels.append(f"landmark {i}")
        k += 1
    if cfg.has_magnetometer:
        Cbar[k, 2:] = cfg.mag_field_I
        y[3 * k : 3 * k + 3] = bundle.y_mag
        labels.append("magnetometer")
        k += 1
    for i, (b, yi) in enumerate(zip(cfg.gps_lever_arms, bundle.y_gps)):
        Cbar[k, 0], Cbar[k, 2:] = -1.0, yi
        y[3 * k : 3 * k + 3] = b
        labels.append(f"gps {i}")
        k += 1
    if cfg.has_inertial_velocity:
        Cbar[k, 1], Cbar[k, 2:] = -1.0, bundle.y_vel_I
        labels.append("inertial-velocity")
        k += 1
    if cfg.has_body_velocity:
        Cbar[k, 1] = 1.0
        y[3 * k : 3 * k + 3] = bundle.y_vel_B
        labels.append("body-velocity")
        k += 1
    if tri is not None:
        i, j, m = tri
        yv, xi = stereo_virtual_output(
            bundle.y_landmarks[i], bundle.y_landmarks[j], bundle.y_landmarks[m],
            cfg.landmarks[i], cfg.landmarks[j], cfg.landmarks[m],
        )
        Cbar[k, 2:] = xi
        y[3 * k : 3 * k + 3] = yv
        labels.append("virtual-cross")
        k += 1

    C = kron(Cbar, I3)

    if opts.use_mag_cross:
        if not (cfg.has_magnetometer and cfg.gps_lever_arms):
            raise ValueError("mag-cross output needs a magnetometer and a GPS receiver")
        block, r = mag_cross_output(bundle.y_mag, bundle.y_gps[0], cfg.mag_field_I, cfg.gps_lever_arms[0])
        C = np.vstack([C, block])
        y = np.concatenate([y, r])
        labels.append("mag-cross")

    return C, Cbar, OutputVector(y, labels)


def assemble(omega, g_I, bundle: MeasurementBundle, cfg: SensorConfig, opts: OutputOptions = OutputOptions()):
    """Every system matrix for one epoch, bundled with the output vector."""
    A, Abar, S = build_A(omega, g_I)
    C, Cbar, out = build_C(bundle, cfg, opts)
    return LtvMatrices(A, build_B(), C, Abar, Cbar, S), out


def reduced_output_matrix(cfg: SensorConfig, opts: OutputOptions = OutputOptions()) -> np.ndarray:
    """
    ``Cbar`` for configurations whose reduced output matrix is constant
    (landmarks, magnetometer and virtual rows only).
    """
    if cfg.gps_lever_arms or cfg.has_inertial_velocity or opts.use_mag_cross:
        raise ValueError("reduced output matrix is time-varying for this configuration")
    rows = [np.concatenate([[-b, 0.0], r]) for r, b in zip(cfg.landmarks, cfg.betas)]
    if cfg.has_magnetometer:
        rows.append(np.concatenate([[0.0, 0.0], cfg.mag_field_I]))
    if cfg.has_body_velocity:
        rows.append(np.array([0.0, 1.0, 0.0, 0.0, 0.0]))
    if opts.use_stereo_virtual:
        tri = virtual_triple(cfg)
        if tri is None:
            raise ValueError("no non-aligned landmark triple for the virtual output")
        i, j, k = tri
        xi = np.cross(cfg.landmarks[i] - cfg.landmarks[j], cfg.landmarks[i] - cfg.landmarks[k])
        rows.append(np.concatenate([[0.0, 0.0], xi]))
    return np.array(rows)

