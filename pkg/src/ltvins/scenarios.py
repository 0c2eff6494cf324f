"""
Scenario definitions and the end-to-end simulation runner.

A scenario bundles a ground-truth trajectory, a sensor suite, observer
weights and output options. ``run_scenario`` generates the truth on a grid
of ``dt / 2`` so every RK4 stage of the observer has an exact sample,
synthesises measurements with noise held constant over each observer step,
and records pose errors at the observer rate.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geom3 import exp_so3, rotation_angle_between
from .ltv import OutputOptions, build_A, build_Abar, build_C, reduced_output_matrix
from .obsv import GramianReport, PeReport, SampledSystem, gramian, pe_condition_gps
from .observer import (
    GainConfig,
    constant_gain_design,
    constant_gain_step,
    initial_state,
    reconstruct_attitude,
    recover_inertial,
    riccati_step,
)
from .sensors import NoisePowers, NoiseSource, SensorConfig, reference_sensor_suite, measure_epoch
from .truth import GRAVITY_NED, R0_EIGHT, TrajectorySpec, TruthRun, generate_run

CSV_VERSION = "v1"
DEFAULT_DURATION = 20.0
DEFAULT_DT = 1e-3


@dataclass
class ScenarioConfig:
    name: str
    trajectory: TrajectorySpec
    sensors: SensorConfig
    gain: GainConfig = field(default_factory=GainConfig)
    options: OutputOptions = field(default_factory=OutputOptions)
    duration: float = DEFAULT_DURATION
    dt: float = DEFAULT_DT
    seed: int = 0
    metrics_window: tuple[float, float] | None = None
    p_hat0: np.ndarray = field(default_factory=lambda: np.ones(3))
    v_hat0: np.ndarray = field(default_factory=lambda: np.ones(3))
    R_hat0: np.ndarray = field(default_factory=lambda: np.eye(3))
    noise: bool = True

    def validate(self) -> None:
        if not self.dt > 0 or not self.duration >= self.dt:
            raise ValueError(f"{self.name}: need dt > 0 and duration >= dt")
        if self.gain.mode == "constant" and self.options.use_mag_cross:
            raise ValueError(f"{self.name}: constant gain requires Kronecker-structured outputs")
        if self.metrics_window is not None:
            a, b = self.metrics_window
            if not 0 <= a <= b <= self.duration:
                raise ValueError(f"{self.name}: metrics window outside the run")

    @property
    def window(self) -> tuple[float, float]:
        return self.metrics_window or (0.5 * self.duration, self.duration)

    def truth_spec(self) -> TrajectorySpec:
        # observer RK4 stages need samples at half steps
        return replace(self.trajectory, duration=self.duration, dt=0.5 * self.dt)

    def with_overrides(self, *, seed=None, dt=None, duration=None, noise=None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if dt is not None:
            cfg = replace(cfg, dt=float(dt))
        if duration is not None:
            cfg = replace(cfg, duration=float(duration), metrics_window=None)
        if noise is not None:
            cfg = replace(cfg, noise=bool(noise))
        return cfg


@dataclass
class RunMetrics:
    avg_pos_err: float
    avg_vel_err: float
    avg_att_err: float
    final_pos_err: float
    final_vel_err: float
    final_att_err: float
    convergence_time: float
    window: tuple[float, float]
    eps: float = 0.1

    FIELDS = (
        "avg_pos_err",
        "avg_vel_err",
        "avg_att_err",
        "final_pos_err",
        "final_vel_err",
        "final_att_err",
        "convergence_time",
    )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    t: np.ndarray
    p_hat: np.ndarray
    v_hat: np.ndarray
    R_hat: np.ndarray
    pos_err: np.ndarray
    vel_err: np.ndarray
    att_err: np.ndarray
    degenerate: np.ndarray
    metrics: RunMetrics
    truth: TruthRun
    xhat: np.ndarray  # body-frame state estimates, (n, 15)

    def error_at(self, t: float) -> float:
        k = int(round(t / self.config.dt))
        return float(self.pos_err[k])


# -- builtins -----------------------------------------------------------------

STEREO_NAMES = ("Stereo-TVG-VO", "Stereo-CG-VO", "Stereo-TVG", "Stereo-CG")
GPS_NAMES = ("GPS-P", "GPS-P-V", "GPS-P-V-MAG")


def _eight_spec() -> TrajectorySpec:
    return TrajectorySpec(kind="analytic-eight", g_I=GRAVITY_NED.copy(), R0=R0_EIGHT.copy())


def builtin_scenarios() -> list[ScenarioConfig]:
    """The four landmark-aided and three GPS-aided reference scenarios."""
    out = []
    for name in STEREO_NAMES:
        mode = "constant" if "-CG" in name else "riccati"
        out.append(
            ScenarioConfig(
                name=name,
                trajectory=_eight_spec(),
                sensors=reference_sensor_suite("stereo"),
                gain=GainConfig(mode=mode),
                options=OutputOptions(use_stereo_virtual=name.endswith("-VO")),
            )
        )
    for name in GPS_NAMES:
        out.append(
            ScenarioConfig(
                name=name,
                trajectory=_eight_spec(),
                sensors=reference_sensor_suite(
                    "gps", inertial_velocity="-V" in name, magnetometer=name.endswith("MAG")
                ),
                gain=GainConfig(mode="riccati"),
            )
        )
    return out


def get_builtin(name: str) -> ScenarioConfig:
    for cfg in builtin_scenarios():
        if cfg.name.lower() == name.lower():
            return cfg
    raise KeyError(f"no builtin scenario named {name!r}")


# -- runner -------------------------------------------------------------------


def _stage_inputs(run: TruthRun, idx, cfg: ScenarioConfig, noise):
    As, Cs, ys, aBs = [], [], [], []
    labels = None
    for i in idx:
        b = measure_epoch(run[i], cfg.sensors, noise)
        As.append(build_A(b.omega_meas, run.g_I)[0])
        C, _, out = build_C(b, cfg.sensors, cfg.options)
        Cs.append(C)
        ys.append(out.y)
        aBs.append(b.aB_meas)
        labels = out.row_labels
    return tuple(As), tuple(Cs), tuple(ys), tuple(aBs), labels


def design_constant_gain(cfg: ScenarioConfig) -> np.ndarray:
    """Reduced gain from the algebraic Riccati equation at the scenario's weights."""
    if cfg.gain.Kbar is not None:
        return np.asarray(cfg.gain.Kbar, float)
    Cbar = reduced_output_matrix(cfg.sensors, cfg.options)
    Abar = build_Abar(cfg.trajectory.g_I)
    return constant_gain_design(Abar, Cbar, cfg.gain.q, _reduced_v(cfg.gain.v))


def _reduced_v(v) -> float:
    v = np.asarray(v, float)
    if v.ndim:
        raise ValueError("constant gain design needs a scalar V weight")
    return float(v)


def run_scenario(
    cfg: ScenarioConfig,
    truth: TruthRun | None = None,
    out_dir: str | Path | None = None,
    eps: float = 0.1,
) -> ScenarioResult:
    """
    Simulate truth, sensors and observer for one scenario.

    ``truth`` may be passed to reuse a run generated from
    ``cfg.truth_spec()``. When ``out_dir`` is given, ``truth.csv``,
    ``estimates.csv`` and ``metrics.csv`` are written there.
    """
    cfg.validate()
    run = truth if truth is not None else generate_run(cfg.truth_spec())
    n_steps = (len(run) - 1) // 2
    if abs(run.dt - 0.5 * cfg.dt) > 1e-12:
        raise ValueError(f"{cfg.name}: truth grid must be dt/2")

    sensors = replace(cfg.sensors, seed=cfg.seed) if cfg.noise else cfg.sensors.without_noise()
    cfg = replace(cfg, sensors=sensors)
    source = NoiseSource(sensors, cfg.dt) if cfg.noise else None

    constant = cfg.gain.mode == "constant"
    Kbar = design_constant_gain(cfg) if constant else None
    st = initial_state(cfg.p_hat0, cfg.v_hat0, cfg.R_hat0, cfg.gain)

    t = np.arange(n_steps + 1) * cfg.dt
    p_hat = np.empty((n_steps + 1, 3))
    v_hat = np.empty((n_steps + 1, 3))
    R_hat = np.empty((n_steps + 1, 3, 3))
    degenerate = np.zeros(n_steps + 1, dtype=bool)
    xs = np.empty((n_steps + 1, 15))

    def record(j, xhat):
        xs[j] = xhat
        R, deg = reconstruct_attitude(xhat)
        est = recover_inertial(xhat, R, t[j], deg)
        p_hat[j], v_hat[j], R_hat[j], degenerate[j] = est.p_I_hat, est.v_I_hat, R, deg

    record(0, st.xhat)
    try:
        for k in range(n_steps):
            w = source.draw() if source is not None else None
            A, C, y, aB, labels = _stage_inputs(run, (2 * k, 2 * k + 1, 2 * k + 2), cfg, w)
            if constant:
                st = constant_gain_step(st, A, C, y, aB, Kbar, cfg.dt, labels)
            else:
                st = riccati_step(st, A, C, y, aB, cfg.gain, cfg.dt, labels)
            record(k + 1, st.xhat)
    except Exception as exc:
        raise type(exc)(f"scenario {cfg.name!r}: {exc}") from exc

    idx = np.arange(0, len(run), 2)
    pos_err = np.linalg.norm(p_hat - run.p_I[idx], axis=1)
    vel_err = np.linalg.norm(v_hat - run.v_I[idx], axis=1)
    att_err = np.array([rotation_angle_between(R_hat[j], run.R[i]) for j, i in enumerate(idx)])
    metrics = compute_metrics(t, pos_err, vel_err, att_err, cfg.window, eps)
    res = ScenarioResult(cfg, t, p_hat, v_hat, R_hat, pos_err, vel_err, att_err, degenerate, metrics, run, xs)
    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


def compute_metrics(t, pos_err, vel_err, att_err, window, eps: float = 0.1) -> RunMetrics:
    a, b = window
    sel = (t >= a - 1e-9) & (t <= b + 1e-9)
    above = np.nonzero(pos_err >= eps)[0]
    if above.size == 0:
        conv = float(t[0])
    elif above[-1] == len(t) - 1:
        conv = float("inf")
    else:
        conv = float(t[above[-1] + 1])
    return RunMetrics(
        avg_pos_err=float(np.mean(pos_err[sel])),
        avg_vel_err=float(np.mean(vel_err[sel])),
        avg_att_err=float(np.mean(att_err[sel])),
        final_pos_err=float(pos_err[-1]),
        final_vel_err=float(vel_err[-1]),
        final_att_err=float(att_err[-1]),
        convergence_time=conv,
        window=(float(a), float(b)),
        eps=eps,
    )


# -- output files -------------------------------------------------------------

ESTIMATE_COLUMNS = (
    ["t"]
    + [f"p_hat_{i}" for i in range(3)]
    + [f"v_hat_{i}" for i in range(3)]
    + [f"R_hat_{i}{j}" for i in range(3) for j in range(3)]
    + ["pos_err", "vel_err", "att_err", "degenerate"]
)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def estimates_csv(res: ScenarioResult) -> str:
    buf = io.StringIO()
    buf.write(f"# ltvins estimates {CSV_VERSION} scenario={res.config.name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for j in range(len(res.t)):
        row = np.concatenate(
            [[res.t[j]], res.p_hat[j], res.v_hat[j], res.R_hat[j].reshape(-1),
             [res.pos_err[j], res.vel_err[j], res.att_err[j]]]
        )
        w.writerow([_fmt(x) for x in row] + [str(int(res.degenerate[j]))])
    return buf.getvalue()


def metrics_csv(rows: list[tuple[str, RunMetrics]]) -> str:
    buf = io.StringIO()
    buf.write(f"# ltvins metrics {CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", *RunMetrics.FIELDS, "window_start", "window_end", "eps"])
    for name, m in rows:
        w.writerow(
            [name]
            + [_fmt(getattr(m, f)) for f in RunMetrics.FIELDS]
            + [_fmt(m.window[0]), _fmt(m.window[1]), _fmt(m.eps)]
        )
    return buf.getvalue()


def write_outputs(res: ScenarioResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.truth.to_csv(out / "truth.csv", stride=2)
    (out / "estimates.csv").write_text(estimates_csv(res))
    (out / "metrics.csv").write_text(metrics_csv([(res.config.name, res.metrics)]))


def read_estimates(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of an ``estimates.csv`` file keyed by header name."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


# -- diagnostics --------------------------------------------------------------


def analyze(
    cfg: ScenarioConfig,
    t0: float = 0.0,
    delta: float = 1.0,
    truth: TruthRun | None = None,
) -> tuple[GramianReport, PeReport | None]:
    """
    Observability diagnostics on the noise-free truth of a scenario.

    Returns the Gramian report for the window ``[t0, t0 + delta]`` and, for
    configurations with a GPS receiver, the excitation report as well.
    """
    cfg.validate()
    if truth is None:
        spec = replace(cfg.truth_spec(), duration=max(cfg.duration, t0 + delta))
        truth = generate_run(spec)
    sys = SampledSystem(truth, cfg.sensors, cfg.options)
    rep = gramian(sys, t0, delta)
    pe = None
    if cfg.sensors.gps_lever_arms:
        s = cfg.sensors
        pe = pe_condition_gps(truth, s.alpha_m, s.alpha_v, s.mag_field_I, t0, delta)
    return rep, pe


# -- config files -------------------------------------------------------------


def _vec(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.replace(",", " ").split()])


def _vecs(s: str) -> list[np.ndarray]:
    return [_vec(part) for part in s.split(";") if part.strip()]


def _fmt_vec(v) -> str:
    return ", ".join(_fmt(float(x)) for x in np.asarray(v).reshape(-1))


def _fmt_vecs(vs) -> str:
    return "; ".join(_fmt_vec(v) for v in vs)


def load_scenario(source: str | Path) -> ScenarioConfig:
    """
    Parse an INI scenario file. Missing keys fall back to the reference
    defaults; ``[scenario] base = <builtin>`` starts from a builtin.
    """
    if isinstance(source, Path) or "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    cp = configparser.ConfigParser()
    cp.read_string(text)
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    base = sc.get("base")
    cfg = get_builtin(base) if base else builtin_scenarios()[0]
    name = sc.get("name", base or "custom")

    tr = cfg.trajectory
    if cp.has_section("trajectory"):
        s = cp["trajectory"]
        tr = replace(
            tr,
            kind=s.get("kind", tr.kind),
            g_I=_vec(s["gravity"]) if "gravity" in s else tr.g_I,
            R0=exp_so3(_vec(s["r0_rotvec"])) if "r0_rotvec" in s else tr.R0,
            p0=_vec(s["p0"]) if "p0" in s else tr.p0,
            v0=_vec(s["v0"]) if "v0" in s else tr.v0,
        )

    sens = cfg.sensors
    if cp.has_section("sensors"):
        s = cp["sensors"]
        noise = sens.noise
        nkw = {k: s.getfloat(f"noise_{k}") for k in NoisePowers().__dict__ if f"noise_{k}" in s}
        if nkw:
            noise = replace(noise, **nkw)
        landmarks = _vecs(s["landmarks"]) if "landmarks" in s else sens.landmarks
        betas = [int(b) for b in s["betas"].split(",") if b.strip()] if "betas" in s else (
            sens.betas if "landmarks" not in s else [1] * len(landmarks)
        )
        sens = SensorConfig(
            landmarks=landmarks,
            betas=betas,
            gps_lever_arms=_vecs(s["gps_lever_arms"]) if "gps_lever_arms" in s else sens.gps_lever_arms,
            has_inertial_velocity=s.getboolean("inertial_velocity", sens.has_inertial_velocity),
            has_body_velocity=s.getboolean("body_velocity", sens.has_body_velocity),
            has_magnetometer=s.getboolean("magnetometer", sens.has_magnetometer),
            mag_field_I=_vec(s["mag_field"]) if "mag_field" in s else sens.mag_field_I,
            noise=noise,
            seed=sens.seed,
        )

    gain = cfg.gain
    if cp.has_section("gain"):
        s = cp["gain"]
        q_rows = {}
        for key in s:
            if key.startswith("q_row."):
                q_rows[key[len("q_row."):]] = s.getfloat(key)
        gain = GainConfig(
            mode=s.get("mode", gain.mode),
            q=s.getfloat("q", gain.q),
            v=s.getfloat("v", float(np.asarray(gain.v).reshape(-1)[0])),
            p0=s.getfloat("p0", float(np.asarray(gain.p0).reshape(-1)[0])),
            q_rows=q_rows or gain.q_rows,
        )

    opts = cfg.options
    if cp.has_section("options"):
        s = cp["options"]
        opts = OutputOptions(
            use_stereo_virtual=s.getboolean("use_stereo_virtual", opts.use_stereo_virtual),
            use_mag_cross=s.getboolean("use_mag_cross", opts.use_mag_cross),
        )

    p_hat0, v_hat0, R_hat0 = cfg.p_hat0, cfg.v_hat0, cfg.R_hat0
    if cp.has_section("initial"):
        s = cp["initial"]
        p_hat0 = _vec(s["p_hat"]) if "p_hat" in s else p_hat0
        v_hat0 = _vec(s["v_hat"]) if "v_hat" in s else v_hat0
        R_hat0 = exp_so3(_vec(s["r_hat_rotvec"])) if "r_hat_rotvec" in s else R_hat0

    window = cfg.metrics_window
    if "metrics_window" in sc:
        a, b = _vec(sc["metrics_window"])
        window = (a, b)

    out = ScenarioConfig(
        name=name,
        trajectory=tr,
        sensors=sens,
        gain=gain,
        options=opts,
        duration=float(sc.get("duration", cfg.duration)),
        dt=float(sc.get("dt", cfg.dt)),
        seed=int(sc.get("seed", cfg.seed)),
        metrics_window=window,
        p_hat0=p_hat0,
        v_hat0=v_hat0,
        R_hat0=R_hat0,
        noise=str(sc.get("noise", "true")).lower() in ("1", "true", "yes", "on"),
    )
    out.validate()
    return out


def dump_scenario(cfg: ScenarioConfig) -> str:
    """Serialise a scenario to the INI format read by :func:`load_scenario`."""
    from scipy.spatial.transform import Rotation

    s = cfg.sensors
    cp = configparser.ConfigParser()
    cp["scenario"] = {
        "name": cfg.name,
        "duration": _fmt(cfg.duration),
        "dt": _fmt(cfg.dt),
        "seed": str(cfg.seed),
        "noise": str(cfg.noise).lower(),
    }
    if cfg.metrics_window is not None:
        cp["scenario"]["metrics_window"] = _fmt_vec(cfg.metrics_window)
    if cfg.trajectory.kind == "custom-samples":
        raise ValueError("custom-samples trajectories carry callables and cannot be serialised")
    cp["trajectory"] = {
        "kind": cfg.trajectory.kind,
        "gravity": _fmt_vec(cfg.trajectory.g_I),
        "r0_rotvec": _fmt_vec(Rotation.from_matrix(cfg.trajectory.R0).as_rotvec()),
        "p0": _fmt_vec(cfg.trajectory.p0),
        "v0": _fmt_vec(cfg.trajectory.v0),
    }
    sec = {
        "inertial_velocity": str(s.has_inertial_velocity).lower(),
        "body_velocity": str(s.has_body_velocity).lower(),
        "magnetometer": str(s.has_magnetometer).lower(),
        "mag_field": _fmt_vec(s.mag_field_I),
    }
    # empty lists are written too so that loading does not inherit the defaults
    sec["landmarks"] = _fmt_vecs(s.landmarks)
    sec["betas"] = ", ".join(str(b) for b in s.betas)
    sec["gps_lever_arms"] = _fmt_vecs(s.gps_lever_arms)
    for k, v in s.noise.__dict__.items():
        sec[f"noise_{k}"] = _fmt(v)
    cp["sensors"] = sec
    g = cfg.gain
    if np.ndim(g.v) or np.ndim(g.p0):
        raise ValueError("only scalar V and P0 weights can be serialised")
    cp["gain"] = {"mode": g.mode, "q": _fmt(g.q), "v": _fmt(float(g.v)), "p0": _fmt(float(g.p0))}
    for k, v in g.q_rows.items():
        cp["gain"][f"q_row.{k}"] = _fmt(v)
    cp["options"] = {
        "use_stereo_virtual": str(cfg.options.use_stereo_virtual).lower(),
        "use_mag_cross": str(cfg.options.use_mag_cross).lower(),
    }
    cp["initial"] = {
        "p_hat": _fmt_vec(cfg.p_hat0),
        "v_hat": _fmt_vec(cfg.v_hat0),
        "r_hat_rotvec": _fmt_vec(Rotation.from_matrix(cfg.R_hat0).as_rotvec()),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
