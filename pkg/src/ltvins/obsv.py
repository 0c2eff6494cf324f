"""
Transition matrices, observability Gramians and excitation checks.

Every check here is numerical evidence on a finite grid of windows, not a
proof; reports say so in their verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .geom3 import kron
from .ltv import OutputOptions, build_A, build_Abar, build_C, transform_T
from .sensors import SensorConfig, measure_epoch
from .truth import GRAVITY_NED, TruthRun, Vec3Fn, magnus_step

RANK_RTOL = 1e-10
FACTOR_TOL = 1e-6
OBS_RTOL = 1e-10
QUAD_RTOL = 0.01
MIN_QUAD = 10


class QuadratureError(RuntimeError):
    pass


class ReductionMismatch(AssertionError):
    pass


def kalman_rank(Abar: np.ndarray, Cbar: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, bool]:
    """Numerical rank of ``[C; CA; ...; CA^(n-1)]`` and whether it is full."""
    Abar = np.asarray(Abar, float)
    Cbar = np.atleast_2d(np.asarray(Cbar, float))
    n = Abar.shape[0]
    blocks = [Cbar]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ Abar)
    O = np.vstack(blocks)
    s = np.linalg.svd(O, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, False
    rank = int(np.sum(s > rtol * s[0]))
    return rank, rank == n


def kalman_rank_stereo(landmarks, xi=None, g_I=GRAVITY_NED) -> tuple[int, bool]:
    """
    Reduced Kalman rank for ``beta = 1`` landmarks, optionally with the
    virtual cross-product row ``[0 0 xi^T]``.
    """
    rows = [np.concatenate([[-1.0, 0.0], np.asarray(r, float)]) for r in landmarks]
    if xi is not None:
        rows.append(np.concatenate([[0.0, 0.0], np.asarray(xi, float)]))
    Abar = build_Abar(g_I)
    # nilpotent of index 3, so [C; CA; CA^2] already has the full rank
    return kalman_rank(Abar, np.array(rows))


@dataclass
class TransitionResult:
    phi: np.ndarray
    phi_ode: np.ndarray
    residual: float


def transition_matrix(
    omega_fn: Vec3Fn,
    t: float,
    s0: float,
    dt: float = 1e-3,
    g_I=GRAVITY_NED,
    tol: float = FACTOR_TOL,
) -> TransitionResult:
    """
    Transition matrix ``phi(t, s0)`` of ``x' = A(t) x`` computed two ways.

    ``phi_ode`` integrates ``d/dt phi = A(t) phi`` with RK4. ``phi`` is the
    factored form ``exp(Abar (t - s0)) (x) R(t)^T R(s0)``, with the relative
    attitude integrated on SO(3).

    Raises
    ------
    RuntimeError
        If the two forms differ by more than ``tol`` (relative Frobenius).
    """
    if t < s0:
        raise ValueError("t must not precede s0")
    span = t - s0
    n = max(int(np.ceil(span / dt - 1e-9)), 1) if span > 0 else 0
    Abar = build_Abar(g_I)
    phi_ode = np.eye(15)
    R_rel = np.eye(3)
    if n:
        h = span / n
        for k in range(n):
            tk = s0 + k * h
            A0 = build_A(omega_fn(tk), g_I)[0]
            Am = build_A(omega_fn(tk + 0.5 * h), g_I)[0]
            A1 = build_A(omega_fn(tk + h), g_I)[0]
            k1 = A0 @ phi_ode
            k2 = Am @ (phi_ode + 0.5 * h * k1)
            k3 = Am @ (phi_ode + 0.5 * h * k2)
            k4 = A1 @ (phi_ode + h * k3)
            phi_ode = phi_ode + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            R_rel = magnus_step(R_rel, omega_fn, tk, h)
    # T(t)^T (phibar (x) I3) T(s0) = phibar (x) R(t)^T R(s0)
    phi = np.kron(expm(Abar * span), R_rel.T)
    residual = float(np.linalg.norm(phi_ode - phi) / np.linalg.norm(phi))
    if residual > tol:
        raise RuntimeError(f"transition matrix cross-check failed (residual {residual:.3e})")
    return TransitionResult(phi, phi_ode, residual)


class SampledSystem:
    """
    Noise-free LTV system evaluated along a ground-truth run.

    Provides ``omega``, ``C``, ``Cbar`` and the attitude at every truth
    sample; output matrices are built lazily and cached.
    """

    def __init__(self, run: TruthRun, cfg: SensorConfig, opts: OutputOptions = OutputOptions()) -> None:
        self.run = run
        self.cfg = cfg.without_noise()
        self.opts = opts
        self.g_I = run.g_I
        self._cache: dict[int, tuple] = {}

    @property
    def kron_form(self) -> bool:
        return not self.opts.use_mag_cross

    def outputs(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k not in self._cache:
            C, Cbar, _ = build_C(measure_epoch(self.run[k], self.cfg), self.cfg, self.opts)
            self._cache[k] = (C, Cbar)
        return self._cache[k]


@dataclass
class GramianReport:
    t0: float
    delta: float
    W: np.ndarray
    Wbar: np.ndarray | None
    min_eig_W: float
    max_eig_W: float
    min_eig_Wbar: float
    factorization_residual: float
    n_quad: int
    verdict: str
    eig_W: np.ndarray = field(repr=False, default=None)
    eig_Wbar: np.ndarray = field(repr=False, default=None)

    def to_text(self) -> str:
        lines = [
            f"t0 = {self.t0:.6g}",
            f"delta = {self.delta:.6g}",
            f"n_quad = {self.n_quad}",
            f"min_eig_W = {self.min_eig_W:.6e}",
            f"max_eig_W = {self.max_eig_W:.6e}",
            f"min_eig_Wbar = {self.min_eig_Wbar:.6e}",
            f"factorization_residual = {self.factorization_residual:.3e}",
            f"verdict = {self.verdict}",
        ]
        return "\n".join(lines) + "\n"


def _trapezoid(vals: list[np.ndarray], h: float) -> np.ndarray:
    out = 0.5 * (vals[0] + vals[-1])
    for v in vals[1:-1]:
        out = out + v
    return out * h


def _gramian_pass(sys: SampledSystem, k0: int, n_quad: int, stride: int):
    """``W`` and ``Wbar`` with ``n_quad`` trapezoid panels of ``stride`` samples each."""
    run, g = sys.run, sys.g_I
    H = stride * run.dt
    Abar = build_Abar(g)
    step_bar = expm(Abar * H)
    phi = np.eye(15)
    phibar = np.eye(5)
    W_terms, Wbar_terms = [], []
    for j in range(n_quad + 1):
        k = k0 + j * stride
        C, Cbar = sys.outputs(k)
        Cphi = C @ phi
        W_terms.append(Cphi.T @ Cphi)
        if sys.kron_form:
            Cp = Cbar @ phibar
            Wbar_terms.append(Cp.T @ Cp)
        if j == n_quad:
            break
        A0 = build_A(run.omega[k], g)[0]
        Am = build_A(run.omega[k + stride // 2], g)[0]
        A1 = build_A(run.omega[k + stride], g)[0]
        k1 = A0 @ phi
        k2 = Am @ (phi + 0.5 * H * k1)
        k3 = Am @ (phi + 0.5 * H * k2)
        k4 = A1 @ (phi + H * k3)
        phi = phi + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        phibar = step_bar @ phibar
    delta = n_quad * H
    W = _trapezoid(W_terms, H) / delta
    Wbar = _trapezoid(Wbar_terms, H) / delta if sys.kron_form else None
    return 0.5 * (W + W.T), (0.5 * (Wbar + Wbar.T) if Wbar is not None else None)


def gramian(
    sys: SampledSystem,
    t0: float,
    delta: float = 1.0,
    n_quad: int | None = None,
    check: bool = True,
) -> GramianReport:
    """
    Windowed observability Gramian ``W(t0, t0 + delta)`` and its reduced
    counterpart ``Wbar`` by composite trapezoidal quadrature.

    The transition matrix of the full system is propagated with RK4 along
    the truth samples; the reduced one is ``exp(Abar s)``. ``n_quad``
    defaults to the finest grid that keeps a truth sample at every RK4
    midpoint. With ``check`` the result is recomputed on half the panels
    and a change of the smallest eigenvalue above 1 % raises
    :class:`QuadratureError`.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    run = sys.run
    k0 = run.index_of(t0)
    n_samples = int(round(delta / run.dt))
    if k0 + n_samples > len(run) - 1:
        raise ValueError("window extends past the end of the run")
    if n_quad is None:
        n_quad = n_samples // 2
    if n_quad < MIN_QUAD:
        raise ValueError(f"n_quad must be at least {MIN_QUAD}")
    if n_samples % n_quad or (n_samples // n_quad) % 2:
        raise ValueError("each quadrature panel must span an even number of truth samples")
    stride = n_samples // n_quad

    W, Wbar = _gramian_pass(sys, k0, n_quad, stride)
    eig_W = np.linalg.eigvalsh(W)

    if check and n_quad % 2 == 0 and n_quad // 2 >= MIN_QUAD:
        W2, _ = _gramian_pass(sys, k0, n_quad // 2, 2 * stride)
        m1, m2 = eig_W[0], np.linalg.eigvalsh(W2)[0]
        scale = max(abs(m1), 1e-9 * eig_W[-1])
        if abs(m1 - m2) > QUAD_RTOL * scale:
            raise QuadratureError(
                f"Gramian quadrature not converged: min eig {m2:.4e} -> {m1:.4e}"
            )

    if Wbar is not None:
        eig_Wbar = np.linalg.eigvalsh(Wbar)
        T = transform_T(run.R[k0])
        recon = T.T @ kron(Wbar, np.eye(3)) @ T
        residual = float(np.linalg.norm(W - recon) / np.linalg.norm(W))
        min_bar = float(eig_Wbar[0])
    else:
        eig_Wbar, residual, min_bar = None, float("nan"), float("nan")

    verdict = "uniformly-observable-evidence" if eig_W[0] > OBS_RTOL * eig_W[-1] else "deficient"
    return GramianReport(
        t0=t0,
        delta=delta,
        W=W,
        Wbar=Wbar,
        min_eig_W=float(eig_W[0]),
        max_eig_W=float(eig_W[-1]),
        min_eig_Wbar=min_bar,
        factorization_residual=residual,
        n_quad=n_quad,
        verdict=verdict,
        eig_W=eig_W,
        eig_Wbar=eig_Wbar,
    )


def gramian_sweep(sys: SampledSystem, t_grid, delta: float = 1.0, **kw) -> list[GramianReport]:
    return [gramian(sys, float(t), delta, **kw) for t in t_grid]


@dataclass
class ReductionCheck:
    residual: float
    min_eig_W: float
    min_eig_Wbar: float
    ratio: float
    agree: bool


def check_reduction(sys: SampledSystem, t0: float, delta: float = 1.0, tol: float = OBS_RTOL) -> ReductionCheck:
    """
    Compare the full and reduced Gramians on one window.

    Returns the factorisation residual ``||W - T^T (Wbar (x) I3) T|| / ||W||``
    and the two smallest eigenvalues. Raises :class:`ReductionMismatch` when
    one Gramian is positive definite and the other is not.
    """
    if not sys.kron_form:
        raise ValueError("reduction requires Kronecker-structured outputs (mag-cross present)")
    rep = gramian(sys, t0, delta)
    thresh = tol * rep.max_eig_W
    full_ok = rep.min_eig_W > thresh
    red_ok = rep.min_eig_Wbar > thresh
    ratio = rep.min_eig_W / rep.min_eig_Wbar if rep.min_eig_Wbar != 0 else float("nan")
    out = ReductionCheck(rep.factorization_residual, rep.min_eig_W, rep.min_eig_Wbar, ratio, full_ok == red_ok)
    if not out.agree:
        raise ReductionMismatch(
            f"full and reduced observability disagree: {rep.min_eig_W:.3e} vs {rep.min_eig_Wbar:.3e}"
        )
    return out


@dataclass
class PeReport:
    t0: float
    delta: float
    M: np.ndarray
    min_eig: float
    alpha_m: int
    alpha_v: int

    def to_text(self) -> str:
        return (
            f"pe_t0 = {self.t0:.6g}\npe_delta = {self.delta:.6g}\n"
            f"alpha_m = {self.alpha_m}\nalpha_v = {self.alpha_v}\n"
            f"pe_min_eig = {self.min_eig:.6e}\n"
        )


def pe_condition_gps(run: TruthRun, alpha_m: int, alpha_v: int, r1_I, t0: float, delta: float) -> PeReport:
    """
    Excitation matrix for GPS-aided navigation over ``[t0, t0 + delta]``:

        1/delta int (v' - g)(v' - g)^T + alpha_m r1 r1^T + alpha_v/delta int v v^T

    integrated by the trapezoid rule on the truth samples.
    """
    if alpha_m not in (0, 1) or alpha_v not in (0, 1):
        raise ValueError("alpha_m and alpha_v must be 0 or 1")
    k0 = run.index_of(t0)
    n = int(round(delta / run.dt))
    if n < 1 or k0 + n > len(run) - 1:
        raise ValueError("window outside the run")
    sl = slice(k0, k0 + n + 1)
    acc = run.vdot_I[sl] - run.g_I
    vel = run.v_I[sl]
    w = np.full(n + 1, run.dt)
    w[0] = w[-1] = 0.5 * run.dt
    M = np.einsum("k,ki,kj->ij", w, acc, acc) / delta
    r1 = np.asarray(r1_I, float)
    M = M + alpha_m * np.outer(r1, r1)
    if alpha_v:
        M = M + np.einsum("k,ki,kj->ij", w, vel, vel) / delta
    M = 0.5 * (M + M.T)
    return PeReport(t0, delta, M, float(np.linalg.eigvalsh(M)[0]), alpha_m, alpha_v)
