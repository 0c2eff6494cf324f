"""Command-line front end: ``ltvins {list,run,analyze,compare}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .scenarios import (
    RunMetrics,
    ScenarioConfig,
    analyze,
    builtin_scenarios,
    get_builtin,
    load_scenario,
    metrics_csv,
    run_scenario,
)


def resolve(ref: str) -> ScenarioConfig:
    """A scenario from an INI file path or a builtin name."""
    if Path(ref).is_file():
        return load_scenario(Path(ref))
    try:
        return get_builtin(ref)
    except KeyError:
        raise SystemExit(f"error: {ref!r} is neither a scenario file nor a builtin name") from None


def _apply_flags(cfg: ScenarioConfig, args) -> ScenarioConfig:
    return cfg.with_overrides(
        seed=args.seed,
        dt=args.dt,
        duration=args.duration,
        noise=False if args.no_noise else None,
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="noise seed")
    p.add_argument("--dt", type=float, default=None, help="observer step in seconds")
    p.add_argument("--duration", type=float, default=None, help="run length in seconds")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--no-noise", action="store_true", help="disable all sensor noise")


def _metrics_table(rows: list[tuple[str, RunMetrics]]) -> str:
    head = f"{'scenario':<16} {'avg_pos[m]':>11} {'avg_vel[m/s]':>13} {'avg_att[rad]':>13} {'final_pos[m]':>13}"
    lines = [head, "-" * len(head)]
    for name, m in rows:
        lines.append(
            f"{name:<16} {m.avg_pos_err:11.4g} {m.avg_vel_err:13.4g} "
            f"{m.avg_att_err:13.4g} {m.final_pos_err:13.4g}"
        )
    return "\n".join(lines)


def cmd_list(args) -> int:
    for cfg in builtin_scenarios():
        print(f"{cfg.name:<16} gain={cfg.gain.mode:<9} duration={cfg.duration:g}s")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_flags(resolve(args.scenario), args)
    res = run_scenario(cfg, out_dir=args.out)
    print(_metrics_table([(cfg.name, res.metrics)]))
    if args.out is not None:
        print(f"wrote {args.out}/truth.csv, estimates.csv, metrics.csv")
    return 0


def cmd_analyze(args) -> int:
    cfg = _apply_flags(resolve(args.scenario), args)
    rep, pe = analyze(cfg, args.t0, args.delta)
    text = rep.to_text()
    if pe is not None:
        text += "\n" + pe.to_text()
    print(text, end="" if text.endswith("\n") else "\n")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gramian.txt").write_text(text)
    return 0


def cmd_compare(args) -> int:
    rows = []
    for ref in args.scenarios:
        cfg = _apply_flags(resolve(ref), args)
        out = args.out / cfg.name if args.out is not None else None
        rows.append((cfg.name, run_scenario(cfg, out_dir=out).metrics))
    print(_metrics_table(rows))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.csv").write_text(metrics_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltvins", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    sub.add_parser("list", help="list builtin scenarios").set_defaults(fn=cmd_list)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("scenario", help="INI file or builtin name")
    _common(r)
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("analyze", help="observability diagnostics without running the filter")
    a.add_argument("scenario")
    a.add_argument("--t0", type=float, default=0.0, help="window start in seconds")
    a.add_argument("--delta", type=float, default=1.0, help="window length in seconds")
    _common(a)
    a.set_defaults(fn=cmd_analyze)

    c = sub.add_parser("compare", help="run several scenarios and tabulate metrics")
    c.add_argument("scenarios", nargs="+")
    _common(c)
    c.set_defaults(fn=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
