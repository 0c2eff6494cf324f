"""
Continuous-time Kalman observer on the body-frame LTV model.

    x_hat' = A x_hat + B a_B + K (y - C x_hat),     K = P C^T Q
    P'     = A P + P A^T - P C^T Q C P + V

Both equations are advanced together with RK4. System inputs for a step
may be given once (held over the step) or as a ``(start, mid, end)``
triple sampled at the RK4 stage times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_are

from .geom3 import kron, project_to_so3, unvec3
from .ltv import N_STATE

PD_TOL = 1e-12
# largest h * rate accepted per RK4 sub-step
RK4_STEP_LIMIT = 1.0


class ObserverDivergence(RuntimeError):
    """Raised when the Riccati solution stops being positive definite."""


@dataclass
class ObserverState:
    t: float
    xhat: np.ndarray
    P: np.ndarray | None = None


@dataclass
class GainConfig:
    """
    Observer weights.

    ``q`` is the output weight ``Q = q I`` (inverse measurement covariance),
    with optional per-row overrides keyed by output label prefix, e.g.
    ``{"virtual-cross": 10.0}``. ``v`` and ``p0`` are scalars or 15x15
    matrices for ``V`` and ``P(0)``. ``Kbar`` is used in constant mode.
    """

    mode: str = "riccati"
    q: float = 100.0
    v: float | np.ndarray = 10.0
    p0: float | np.ndarray = 1.0
    q_rows: dict[str, float] = field(default_factory=dict)
    Kbar: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("riccati", "constant"):
            raise ValueError(f"unknown gain mode {self.mode!r}")
        if not self.q > 0 or any(w <= 0 for w in self.q_rows.values()):
            raise ValueError("output weights must be positive")
        for name in ("V", "P0"):
            M = getattr(self, name)
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")

    @property
    def V(self) -> np.ndarray:
        return _as_square(self.v, N_STATE)

    @property
    def P0(self) -> np.ndarray:
        return _as_square(self.p0, N_STATE)

    def q_weights(self, labels: list[str] | None, m: int) -> np.ndarray:
        """Diagonal of ``Q`` for an output stack of ``m`` rows."""
        w = np.full(m, float(self.q))
        if labels and self.q_rows:
            for k, lab in enumerate(labels):
                for prefix, val in self.q_rows.items():
                    if lab.startswith(prefix):
                        w[3 * k : 3 * k + 3] = val
        return w


def _as_square(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.shape != (n, n):
        raise ValueError(f"expected a scalar or a {n}x{n} matrix")
    return a


@dataclass
class PoseEstimate:
    t: float
    p_I_hat: np.ndarray
    v_I_hat: np.ndarray
    R_hat: np.ndarray
    degenerate_svd: bool


def _stages(u) -> tuple:
    """Normalise a step input into its three RK4 samples."""
    if isinstance(u, (tuple, list)) and len(u) == 3:
        return tuple(u)
    return (u, u, u)


def _check_pd(P: np.ndarray, t: float) -> None:
    try:
        np.linalg.cholesky(P - PD_TOL * np.eye(len(P)))
    except np.linalg.LinAlgError:
        raise ObserverDivergence(
            f"Riccati solution lost positive definiteness at t={t:.6g}; "
            "reduce dt or the output weight Q"
        ) from None


def riccati_step(
    st: ObserverState,
    A,
    C,
    y,
    a_B,
    cfg: GainConfig,
    dt: float,
    labels: list[str] | None = None,
) -> ObserverState:
    """
    Advance the state estimate and the Riccati solution by ``dt``.

    Parameters
    ----------
    st : ObserverState
        Current estimate and Riccati matrix.
    A, C, y, a_B
        System matrix, output matrix, output vector and apparent
        acceleration. Each is either one array held over the step or a
        ``(start, mid, end)`` triple.
    cfg : GainConfig
    dt : float
    labels : list of str, optional
        Output row labels, used for per-row ``Q`` overrides.

    Returns
    -------
    ObserverState
        Symmetrised ``P`` at ``t + dt``.

    Notes
    -----
    While ``P`` is large the correction term is stiff. The step is then
    split into equal RK4 sub-steps with inputs interpolated quadratically
    through the three stage samples.

    Raises
    ------
    ObserverDivergence
        If the updated ``P`` is not positive definite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    stages = [_stages(A), _stages(C), _stages(y), _stages(a_B)]
    V = cfg.V
    q = cfg.q_weights(labels, stages[1][0].shape[0])

    def f(x, P, A, C, y, a):
        PCt = P @ C.T
        PCtQ = PCt * q
        dx = A @ x + PCtQ @ (y - C @ x)
        dx[3:6] += a
        AP = A @ P
        dP = AP + AP.T - PCtQ @ PCt.T + V
        return dx, dP

    # the correction term is stiff while P is large; split the step so that
    # h * ||P C^T Q C|| stays inside the RK4 stability region
    C0 = stages[1][0]
    rate = np.linalg.norm((st.P @ C0.T) * q @ C0) + np.linalg.norm(stages[0][0])
    n_sub = max(1, int(np.ceil(dt * rate / RK4_STEP_LIMIT)))
    x, P = st.xhat, st.P
    h = dt / n_sub
    for j in range(n_sub):
        if n_sub == 1:
            u0, um, u1 = ([s[i] for s in stages] for i in range(3))
        else:
            u0, um, u1 = (
                [_interp(s, (j + c) / n_sub) for s in stages] for c in (0.0, 0.5, 1.0)
            )
        k1x, k1P = f(x, P, *u0)
        k2x, k2P = f(x + 0.5 * h * k1x, P + 0.5 * h * k1P, *um)
        k3x, k3P = f(x + 0.5 * h * k2x, P + 0.5 * h * k2P, *um)
        k4x, k4P = f(x + h * k3x, P + h * k3P, *u1)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        P = P + h / 6.0 * (k1P + 2 * k2P + 2 * k3P + k4P)
        P = 0.5 * (P + P.T)
    t1 = st.t + dt
    _check_pd(P, t1)
    return ObserverState(t1, x, P)


def _interp(u: tuple, s: float):
    """Quadratic through the ``(start, mid, end)`` samples at fraction ``s`` of the step."""
    u0, um, u1 = u
    if u0 is um and um is u1:
        return u0
    l0 = 2.0 * (s - 0.5) * (s - 1.0)
    lm = -4.0 * s * (s - 1.0)
    l1 = 2.0 * s * (s - 0.5)
    return l0 * u0 + lm * um + l1 * u1


def constant_gain_design(Abar, Cbar, Qbar, Vbar, return_P: bool = False):
    """
    Reduced constant gain ``Kbar = P Cbar^T Qbar`` from the algebraic Riccati
    equation ``Abar P + P Abar^T - P Cbar^T Qbar Cbar P + Vbar = 0``.

    Raises
    ------
    ValueError
        If ``Cbar`` is not a constant matrix, ``(Abar, Cbar)`` is not
        observable, or the resulting ``Abar - Kbar Cbar`` is not Hurwitz.
    """
    if callable(Cbar):
        raise ValueError("constant gain design needs a constant Cbar")
    from .obsv import kalman_rank

    Abar = np.asarray(Abar, float)
    Cbar = np.atleast_2d(np.asarray(Cbar, float))
    n, m = Abar.shape[0], Cbar.shape[0]
    Qbar = _as_square(Qbar, m)
    Vbar = _as_square(Vbar, n)
    rank, _ = kalman_rank(Abar, Cbar)
    if rank < n:
        raise ValueError(f"(Abar, Cbar) is not observable (rank {rank} < {n})")
    # filter ARE is the control ARE of the dual pair
    P = solve_continuous_are(Abar.T, Cbar.T, Vbar, np.linalg.inv(Qbar))
    P = 0.5 * (P + P.T)
    Kbar = P @ Cbar.T @ Qbar
    if np.linalg.eigvals(Abar - Kbar @ Cbar).real.max() >= 0:
        raise ValueError("constant gain does not stabilise Abar - Kbar Cbar")
    if return_P:
        return Kbar, P
    return Kbar


def constant_gain_step(
    st: ObserverState,
    A,
    C,
    y,
    a_B,
    Kbar: np.ndarray,
    dt: float,
    labels: list[str] | None = None,
) -> ObserverState:
    """
    Advance the estimate with the fixed gain ``K = Kbar (x) I3``.

    Inputs follow :func:`riccati_step`; ``P`` is carried through unchanged.
    """
    if labels is not None and "mag-cross" in labels:
        raise ValueError("constant gain requires Kronecker-structured outputs (mag-cross present)")
    K = kron(Kbar, np.eye(3))
    As, Cs, ys, aBs = _stages(A), _stages(C), _stages(y), _stages(a_B)
    if Cs[0].shape[0] != K.shape[1]:
        raise ValueError(f"gain expects {K.shape[1]} output rows, got {Cs[0].shape[0]}")

    def f(x, A, C, y, a):
        dx = A @ x + K @ (y - C @ x)
        dx[3:6] += a
        return dx

    x0, h = st.xhat, dt
    k1 = f(x0, As[0], Cs[0], ys[0], aBs[0])
    k2 = f(x0 + 0.5 * h * k1, As[1], Cs[1], ys[1], aBs[1])
    k3 = f(x0 + 0.5 * h * k2, As[1], Cs[1], ys[1], aBs[1])
    k4 = f(x0 + h * k3, As[2], Cs[2], ys[2], aBs[2])
    return ObserverState(st.t + dt, x0 + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), st.P)


def reconstruct_attitude(xhat) -> tuple[np.ndarray, bool]:
    """Nearest rotation to ``unvec3(z_hat)^T``, with the SVD degeneracy flag."""
    Rbar = unvec3(np.asarray(xhat, float)[6:15]).T
    return project_to_so3(Rbar)


def recover_inertial(xhat, R_hat, t: float = 0.0, degenerate: bool = False) -> PoseEstimate:
    xhat = np.asarray(xhat, float)
    return PoseEstimate(t, R_hat @ xhat[0:3], R_hat @ xhat[3:6], R_hat, degenerate)


def initial_state(p_I_hat, v_I_hat, R_hat, cfg: GainConfig, t: float = 0.0) -> ObserverState:
    """Observer state from an inertial-frame initial guess."""
    from .ltv import state_from_pose

    P = cfg.P0 if cfg.mode == "riccati" else None
    return ObserverState(t, state_from_pose(p_I_hat, v_I_hat, R_hat), P)
