"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from ltvins.geom3 import is_rotation, kron, orthogonality_residual, project_to_so3, skew, vec
from ltvins.ltv import OutputOptions, build_Abar, reduced_output_matrix, state_from_pose, transform_T
from ltvins.obsv import SampledSystem, check_reduction, gramian, gramian_sweep, kalman_rank_stereo, pe_condition_gps, transition_matrix
from ltvins.scenarios import GPS_NAMES, STEREO_NAMES, design_constant_gain, get_builtin, run_scenario
from ltvins.sensors import reference_sensor_suite
from ltvins.truth import GRAVITY_NED, TrajectorySpec, angular_velocity_profile, generate_run

SEEDS = range(10)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def eight():
    return generate_run(TrajectorySpec(duration=20.0, dt=5e-4))


# 1 -----------------------------------------------------------------------------


def test_criterion_1_identities(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = {"vec": 0.0, "mixed": 0.0, "conj": 0.0}
    for _ in range(1000):
        A, B, C = rng.normal(size=(3, 3, 3))
        worst["vec"] = max(worst["vec"], _rel(kron(C.T, A) @ vec(B), vec(A @ B @ C)))
        P, Q = rng.normal(size=(2, 2, 2))
        X, Y = rng.normal(size=(2, 3, 3))
        worst["mixed"] = max(worst["mixed"], _rel(kron(P, X) @ kron(Q, Y), kron(P @ Q, X @ Y)))
        R = Rotation.random(random_state=rng).as_matrix()
        v = rng.normal(size=3)
        worst["conj"] = max(worst["conj"], _rel(R.T @ skew(v) @ R, skew(R.T @ v)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-10 and elapsed < 5.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"max rel err {detail}; {elapsed:.2f} s")


# 2 -----------------------------------------------------------------------------


def test_criterion_2_transition_factorization(report, eight):
    start = time.perf_counter()
    Abar = build_Abar(GRAVITY_NED)
    s = 1.0
    errs = []
    for delta in (0.1, 1.0, 5.0):
        phi_ode = transition_matrix(angular_velocity_profile, s + delta, s).phi_ode
        i, j = eight.index_of(s + delta), eight.index_of(s)
        closed = transform_T(eight.R[i]).T @ kron(expm(Abar * delta), np.eye(3)) @ transform_T(eight.R[j])
        errs.append(_rel(phi_ode, closed))
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-6 and elapsed < 10.0
    assert report(2, ok, "rel err " + ", ".join(f"{e:.1e}" for e in errs) + f" for delta 0.1/1/5; {elapsed:.2f} s")


# 3 -----------------------------------------------------------------------------


def test_criterion_3_gramian_factorization(report, eight):
    cfg = get_builtin("Stereo-TVG-VO")
    sys = SampledSystem(eight, cfg.sensors, cfg.options)
    rep = gramian(sys, 2.0, 1.0)
    match = np.abs(rep.eig_W - np.sort(np.repeat(rep.eig_Wbar, 3))).max()
    check_reduction(sys, 2.0, 1.0)
    ok = rep.factorization_residual < 1e-8 and match < 1e-6
    assert report(3, ok, f"residual {rep.factorization_residual:.1e}, eigenvalue mismatch {match:.1e}")


# 4 -----------------------------------------------------------------------------


def test_criterion_4_uniform_observability(report, eight):
    cfg = get_builtin("Stereo-TVG-VO")
    reps = gramian_sweep(SampledSystem(eight, cfg.sensors, cfg.options), np.arange(0.0, 19.5, 0.5), 1.0)
    mins = np.array([r.min_eig_W for r in reps])
    d = np.array([0.0, 1.0, 1.0])
    rank, _ = kalman_rank_stereo([np.array([1.0, 0.0, 0.0]) + k * d for k in range(3)])
    ok = mins.min() > 0 and mins.min() >= 1e-4 * mins.max() and rank < 5
    assert report(4, ok, f"min eig over grid {mins.min():.3e} (max {mins.max():.3e}); collinear rank {rank}")


# 5 -----------------------------------------------------------------------------


def test_criterion_5_constant_gain_error_dynamics(report):
    cfg = get_builtin("Stereo-CG-VO").with_overrides(noise=False, duration=5.0)
    res = run_scenario(cfg)
    Cbar = reduced_output_matrix(cfg.sensors, cfg.options)
    F = build_Abar(GRAVITY_NED) - design_constant_gain(cfg) @ Cbar
    run = res.truth
    worst = 0.0
    eta0 = None
    for j in range(0, len(res.t), 50):
        i = 2 * j
        eta = transform_T(run.R[i]) @ (state_from_pose(run.p_I[i], run.v_I[i], run.R[i]) - res.xhat[j])
        if eta0 is None:
            eta0 = eta
        expected = kron(expm(F * res.t[j]), np.eye(3)) @ eta0
        worst = max(worst, np.linalg.norm(eta - expected) / np.linalg.norm(expected))
    rate = np.linalg.eigvals(F).real.max()
    ok = worst < 1e-6 and rate < 0
    assert report(5, ok, f"max rel err {worst:.1e} over 5 s; max Re eig {rate:.4f}")


# 6 -----------------------------------------------------------------------------


def test_criterion_6_excitation(report, eight):
    m = reference_sensor_suite("gps").mag_field_I
    excited = [pe_condition_gps(eight, 1, 1, m, t0, 2.0).min_eig for t0 in np.arange(0.0, 18.5, 0.5)]
    line = generate_run(TrajectorySpec(kind="constant-velocity", v0=np.array([1.0, 0.5, 0.0]), duration=6.0))
    flat = max(pe_condition_gps(line, 0, 0, m, t0, 2.0).min_eig for t0 in (0.0, 2.0, 4.0))
    ok = min(excited) > 0 and flat < 1e-8
    assert report(6, ok, f"eight min eig {min(excited):.3e}; straight line {flat:.1e}")


# 7 -----------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["Stereo-TVG-VO", "GPS-P-V-MAG"])
def test_criterion_7_noise_free_convergence(report, name):
    cfg = get_builtin(name).with_overrides(noise=False, duration=10.0)
    start = time.perf_counter()
    res = run_scenario(cfg)
    elapsed = time.perf_counter() - start
    sel = res.t >= 5.0
    slope = np.polyfit(res.t[sel], np.log(res.pos_err[sel] + res.att_err[sel]), 1)[0]
    pos, att = res.pos_err[-1], res.att_err[-1]
    ok = pos < 1e-2 and att < 1e-2 and slope < 0 and elapsed < 30.0
    assert report(7, ok, f"{name}: pos {pos:.1e} m, att {att:.1e} rad, slope {slope:.2f}; {elapsed:.1f} s")


# 8 -----------------------------------------------------------------------------


def test_criterion_8_stereo_ordering(report):
    truth = generate_run(get_builtin(STEREO_NAMES[0]).truth_spec())
    avg = {n: [] for n in STEREO_NAMES}
    for seed in SEEDS:
        for n in STEREO_NAMES:
            res = run_scenario(get_builtin(n).with_overrides(seed=seed), truth=truth)
            avg[n].append(res.metrics.avg_pos_err)
    m = {n: float(np.mean(v)) for n, v in avg.items()}
    tvg_vo, cg_vo, tvg, cg = (m[n] for n in STEREO_NAMES)
    ordered = tvg_vo < cg_vo <= cg < tvg
    banded = 0.05 <= tvg_vo <= 0.40
    detail = ", ".join(f"{n} {v:.3f} m" for n, v in m.items())
    assert report(8, ordered and banded, f"{detail}; ordering {ordered}, band {banded}")


# 9 -----------------------------------------------------------------------------


def test_criterion_9_gps_monotonicity(report):
    truth = generate_run(get_builtin(GPS_NAMES[0]).with_overrides(duration=5.0).truth_spec())

    def errors(seed):
        return [
            run_scenario(get_builtin(n).with_overrides(seed=seed, duration=5.0), truth=truth).pos_err[-1]
            for n in GPS_NAMES
        ]

    default = errors(get_builtin(GPS_NAMES[0]).seed)
    mono = lambda e: e[0] > e[1] > e[2]  # noqa: E731
    hits = sum(mono(errors(s)) for s in SEEDS)
    ok = mono(default) and hits >= 8
    detail = "/".join(f"{e:.3f}" for e in default)
    assert report(9, ok, f"default seed P/P-V/P-V-MAG {detail} m; monotone on {hits}/10 seeds")


# 10 ----------------------------------------------------------------------------


def test_criterion_10_projection_optimality(report):
    rng = np.random.default_rng(10)
    pool = Rotation.random(10_000, random_state=rng).as_matrix()
    wins, worst_orth, worst_det = 0, 0.0, 0.0
    for _ in range(100):
        M = Rotation.random(random_state=rng).as_matrix() + 0.3 * rng.normal(size=(3, 3))
        R, _ = project_to_so3(M)
        d = np.linalg.norm(M - R)
        if d <= np.linalg.norm(pool - M, axis=(1, 2)).min():
            wins += 1
        worst_orth = max(worst_orth, orthogonality_residual(R))
        worst_det = max(worst_det, abs(np.linalg.det(R) - 1.0))
        assert is_rotation(R)
    ok = wins == 100 and worst_orth < 1e-9 and worst_det < 1e-9
    assert report(10, ok, f"beats sampled rotations {wins}/100; orth {worst_orth:.1e}, det {worst_det:.1e}")
