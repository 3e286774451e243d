"""Command-line entry point: ``ranscope <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 insufficient data.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .csvio import read_events, read_packets, read_table, write_bsr, write_events, write_packets
from .errors import ConfigError, InsufficientData, NoOverlap, RanscopeError
from .gandalf.compensate import compensate_retx
from .gandalf.detect import detect_candidate_events, read_candidates, synchronize, write_candidates
from .gandalf.filtering import FilterConfig, ran_aware_filter, spectrum
from .gandalf.series import owd_series, read_delays, rtt_series, write_delays
from .harness.experiment import (ExperimentSpec, ablation_suite, report_spectrum, run_experiment)
from .harness.metrics import variation_range
from .harness.scenarios import BUILTINS, builtin
from .sim.link import run_trace
from .sim.scenario import LinkScenario, read_config, scenario_from_config
from .timing import Direction

EXIT_CONFIG = 2
EXIT_DATA = 3
EXPERIMENT_KEYS = {"base", "controller", "signal", "trials"}


def resolve_config(arg: str) -> tuple[LinkScenario, dict]:
    """A built-in scenario name or an INI file; returns (scenario, experiment options)."""
    if arg in BUILTINS:
        b = BUILTINS[arg]
        return b.scenario, {"controller": b.controller}
    if not Path(arg).exists():
        raise ConfigError(f"{arg}: neither a file nor a built-in ({', '.join(BUILTINS)})")
    parser = read_config(arg)
    opts: dict = {}
    if parser.has_section("experiment"):
        unknown = set(parser.options("experiment")) - EXPERIMENT_KEYS
        if unknown:
            raise ConfigError(f"{arg}: [experiment] unknown keys {sorted(unknown)}")
        opts = dict(parser.items("experiment"))
    base = None
    if "base" in opts:
        b = builtin(opts.pop("base").strip())
        base = b.scenario
        opts.setdefault("controller", b.controller)
    if "trials" in opts:
        try:
            opts["trials"] = int(opts["trials"])
        except ValueError:
            raise ConfigError(f"{arg}: [experiment] trials must be an integer") from None
    return scenario_from_config(parser, arg, base), opts


def _with_seed(sc: LinkScenario, seed: Optional[int]) -> LinkScenario:
    return sc if seed is None else sc.replace(seed=seed)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    sc, _ = resolve_config(args.config)
    sc = _with_seed(sc, args.seed)
    trace = run_trace(sc)
    out = _out(args)
    write_packets(out / "packets.csv", trace.packets)
    write_events(out / "events.csv", trace.events)
    write_bsr(out / "bsr.csv", trace.bsr)
    write_delays(out / "owd.csv", owd_series(trace.packets, sc.direction, acks=False))
    rtt = rtt_series(trace.packets)
    if len(rtt):
        write_delays(out / "rtt.csv", rtt)
    print(f"packets={len(trace.packets)} events={len(trace.events)} "
          f"mper_dl={trace.stats.mper(Direction.DOWNLINK):.4f} mper_ul={trace.stats.mper(Direction.UPLINK):.4f}")
    if len(rtt):
        print(f"rtt_variation_range_us={variation_range(rtt.delay):.0f}")
    return 0


def cmd_compensate(args) -> int:
    packets = read_packets(args.packets)
    events = read_events(args.events)
    if args.direction:
        direction = Direction.parse(args.direction)
    else:
        data = [p for p in packets if not p.is_ack]
        if not data:
            raise InsufficientData("no data packets in the trace")
        direction = data[0].direction
    series = owd_series(packets, direction, acks=False)
    evs = [e.shifted(args.shift_us) for e in events if e.direction is direction]
    res = compensate_retx(series, evs, args.tti_us)
    out = _out(args)
    write_delays(out / "compensated.csv", res.series)
    print(f"direction={direction.short} events={len(evs)} affected={len(res.affected)} "
          f"unmatched={len(res.unmatched)}")
    return 0


def _filter_cfg(args) -> FilterConfig:
    return FilterConfig(t_bsr_us=args.t_bsr_us, cutoff_hz=args.cutoff_hz, window_us=args.window_us)


def cmd_filter(args) -> int:
    series = read_delays(args.delays)
    filtered = ran_aware_filter(series, _filter_cfg(args))
    write_delays(_out(args) / "filtered.csv", filtered)
    print(f"samples={len(filtered)}")
    return 0


def cmd_sync(args) -> int:
    meta, meta_fields = _peek_header(args.candidates)
    direction = args.direction or meta.get("direction")
    if "delay_us" in meta_fields:
        series = read_delays(args.candidates)
        candidates = detect_candidate_events(series, args.tm_us, args.tol_us, args.tti_us)
        meta = {"direction": series.direction.short} if series.direction is not None else None
        write_candidates(_out(args) / "candidates.csv", candidates, meta)
    else:
        candidates = read_candidates(args.candidates)
    events = read_events(args.events)
    if args.layer:
        events = [e for e in events if e.layer.value == args.layer.upper()]
    if direction:
        d = Direction.parse(direction)
        events = [e for e in events if e.direction is d]
    res = synchronize(candidates, events, args.max_shift_us, delivery_offset_us=args.tti_us)
    print(f"shift_us={res.shift_us} match_ratio={res.match_ratio:.3f} pairs={len(res.matched_pairs)}")
    return 0


def _peek_header(path) -> tuple[dict, list[str]]:
    _, meta = read_table(path, ())
    text = Path(path).read_text().splitlines()
    header = next((ln for ln in text if not ln.startswith("#")), "")
    return meta, header.split(",")


def _spec_from(args, default_controller: str = "copa", default_trials: int = 1) -> ExperimentSpec:
    sc, opts = resolve_config(args.config)
    sc = _with_seed(sc, args.seed)
    controller = args.controller or opts.get("controller") or default_controller
    if controller == "none":
        controller = default_controller
    signal = args.signal or opts.get("signal", "raw")
    trials = args.trials or opts.get("trials", default_trials)
    return ExperimentSpec(sc, controller, signal, trials, name=Path(args.config).stem)


def cmd_cc_run(args) -> int:
    spec = _spec_from(args)
    result = run_experiment(spec, _out(args))
    s = result.summary
    util = f" utilization={s['utilization']:.3f}" if "utilization" in s else ""
    over = f" overuse={s['overuse_count']:.1f}" if "overuse_count" in s else ""
    print(f"controller={spec.controller.value} signal={spec.signal} trials={spec.trials} "
          f"throughput_mbps={s['throughput_mbps']:.3f} rtt_p50_us={s['rtt_p50_us']:.0f}{util}{over}")
    return 0


def cmd_ablate(args) -> int:
    spec = _spec_from(args, default_trials=5)
    report = ablation_suite(spec, _out(args))
    for row in report.rows():
        print("mode={} throughput_mbps={:.3f} vs_full={:.2f}".format(row[0], row[1], row[5]))
    return 0


def cmd_spectrum(args) -> int:
    cfg = FilterConfig(t_bsr_us=args.t_bsr_us)
    rep = report_spectrum(args.delays, cfg, _out(args))
    print(f"floor_db={rep.floor_db:.1f}")
    for f, db in rep.peaks:
        print(f"peak_hz={f:g} excess_db={db:.1f}")
    return 0


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise ConfigError(f"{root}: not a directory")
    found = False
    for path in sorted(root.rglob("ablation.csv")):
        found = True
        rows, _ = read_table(path, ("mode", "throughput_mbps"))
        print(f"[{path.relative_to(root)}]")
        for r in rows:
            print(f"  {r['mode']:8s} throughput_mbps={float(r['throughput_mbps']):.3f} "
                  f"vs_full={float(r['throughput_vs_full'] or 'nan'):.2f}")
    for path in sorted(root.rglob("report.csv")):
        found = True
        rows, meta = read_table(path, ("seed", "throughput_mbps"))
        mean = next(r for r in rows if r["seed"] == "mean")
        print(f"[{path.relative_to(root)}] controller={meta.get('controller')} signal={meta.get('signal')} "
              f"trials={len(rows) - 1} throughput_mbps={float(mean['throughput_mbps']):.3f} "
              f"rtt_p50_us={float(mean['rtt_p50_us']):.0f} variation_range_us={float(mean['variation_range_us']):.0f}")
    if not found:
        delays = sorted(root.rglob("*rtt.csv"))
        if not delays:
            raise InsufficientData(f"{root}: no report.csv, ablation.csv or rtt traces")
        for path in delays:
            s = read_delays(path)
            print(f"[{path.relative_to(root)}] samples={len(s)} variation_range_us={variation_range(s.delay):.0f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ranscope", description="Cellular RAN delay simulation, compensation and congestion-control runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out-dir", default=".", help="output directory (default: .)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the scenario seed")

    sp = sub.add_parser("simulate", help="run the link simulator and write traces")
    sp.add_argument("config", help="INI file or built-in scenario name")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compensate", help="remove retransmission delays from one-way delays")
    sp.add_argument("packets")
    sp.add_argument("events")
    sp.add_argument("--direction", help="dl|ul (default: the data direction)")
    sp.add_argument("--shift-us", type=int, default=0, help="added to event times before matching")
    sp.add_argument("--tti-us", type=int, default=1000)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_compensate)

    def filter_opts(sp):
        sp.add_argument("--t-bsr-us", type=int, default=5000)
        sp.add_argument("--cutoff-hz", type=float, default=10.0)
        sp.add_argument("--window-us", type=int, default=1_000_000)

    sp = sub.add_parser("filter", help="RAN-aware low-pass filter of a delay trace")
    sp.add_argument("delays")
    filter_opts(sp)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("sync", help="estimate the clock shift between bursts and reported events")
    sp.add_argument("candidates", help="candidates CSV, or a delay trace to detect them from")
    sp.add_argument("events")
    sp.add_argument("--max-shift-us", type=int, default=500_000)
    sp.add_argument("--tm-us", type=int, nargs="+", default=[8000], help="expected MAC retx delays")
    sp.add_argument("--tol-us", type=int, default=2000)
    sp.add_argument("--tti-us", type=int, default=1000)
    sp.add_argument("--layer", choices=("mac", "rlc"), default="mac")
    sp.add_argument("--direction", help="dl|ul events to match (default: the delay trace's direction)")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_sync)

    def cc_opts(sp, trials_help):
        sp.add_argument("config", help="INI file or built-in scenario name")
        sp.add_argument("--controller", choices=("copa", "pcc", "gcc"))
        sp.add_argument("--signal", help="raw | gandalf:<full|dl-retx|ul-retx|filter|off>")
        sp.add_argument("--trials", type=int, help=trials_help)
        common(sp)

    sp = sub.add_parser("cc-run", help="closed-loop controller run")
    cc_opts(sp, "number of seeds (default 1)")
    sp.set_defaults(func=cmd_cc_run)

    sp = sub.add_parser("ablate", help="controller under every signal mode")
    cc_opts(sp, "number of seeds per mode (default 5)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("spectrum", help="delay spectrum and peak table")
    sp.add_argument("delays", nargs="+")
    sp.add_argument("--t-bsr-us", type=int, default=5000)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("report", help="summarize an output directory")
    sp.add_argument("dir")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InsufficientData, NoOverlap) as exc:
        print(f"ranscope: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, RanscopeError) as exc:
        print(f"ranscope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
