"""Command-line front end: experiment orchestration and stable output schemas.

Subcommands: simulate, couple, drift, regen, blocks, walk, compare.  Every
output file opens with a header echoing the version, the full configuration
and the seed, so a result can always be reproduced from its own file.
Floats are written with 17 significant digits; identical invocations produce
byte-identical files.  Statistical gates exit nonzero and name the failing
metric on stderr.
"""

from __future__ import annotations

import argparse
import io
import json
import sys

from . import __version__
from .engine import ModelConfig, RandomTape, parse_service
from .explicit_sim import RegenerationResult, run_until_regeneration, write_event_log
from .potential_sim import (
    CircleProfile,
    PotentialProcess,
    Regime,
    empty_state,
    constant_state,
    is_proper,
    read_potential,
)
from . import blocks as blocks_mod
from . import coupling as coupling_mod
from . import lyapunov as lyap


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _header_line(cmd: str, args, extra: dict | None = None) -> str:
    fields = {
        "version": __version__,
        "cmd": cmd,
        "lambda": args.lam,
        "mu": args.mu,
        "speed": args.speed,
        "service": args.service,
        "seed": args.seed,
        "runs": getattr(args, "runs", None),
        "horizon": getattr(args, "horizon", None),
    }
    if extra:
        fields.update(extra)
    parts = [f"{k}={_fmt(v)}" for k, v in fields.items() if v is not None]
    return "# " + " ".join(parts)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


def _write_csv(path: str, header: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(header + "\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    _write_text(path, buf.getvalue())


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _figure_path(out: str) -> str | None:
    if out == "-":
        return None
    stem = out.rsplit(".", 1)[0] if "." in out.rsplit("/", 1)[-1] else out
    return stem + ".png"


def _config(args) -> ModelConfig:
    return ModelConfig(
        lam=args.lam,
        mu=args.mu,
        speed=args.speed,
        service=parse_service(args.service, args.mu),
        polling_idle_moves=not getattr(args, "polling_halt_when_empty", False),
    )


def _parse_init(spec: str):
    """Initial-state source: empty | const:<depth> | file:<path>."""
    if spec == "empty":
        return ("empty", None)
    if spec.startswith("const:"):
        return ("const", float(spec.split(":", 1)[1]))
    if spec.startswith("file:"):
        return ("file", spec.split(":", 1)[1])
    raise ValueError(f"unknown init spec {spec!r}")


def _potential_state(config, tape, init) -> PotentialProcess:
    kind, val = init
    if kind == "empty":
        return empty_state(config, tape)
    if kind == "const":
        return constant_state(config, tape, val)
    profile = read_potential(val)
    if not isinstance(profile, CircleProfile):
        raise ValueError("simulate/couple need a circle potential file")
    ok, (x_min, x_max) = is_proper(profile, 0.0, 0.0)
    del ok, x_min
    return PotentialProcess(profile, x_max, x_max, Regime.SERVING, tape, config)


def _potential_regen(config, tape, init, horizon) -> RegenerationResult:
    state = _potential_state(config, tape, init)
    started = state.regime is not Regime.IDLE
    first_arrival = 0.0 if started else None
    while True:
        if state.clock + state.next_dt() > horizon:
            return RegenerationResult(
                None, True, state.departures, state.moving_time,
                state.serving_time, state.idle_time, first_arrival,
            )
        ev = state.step()
        if ev.kind == "arrival" and not started:
            started = True
            first_arrival = ev.time
        if ev.kind == "regeneration" and started:
            return RegenerationResult(
                ev.time, False, state.departures, state.moving_time,
                state.serving_time, state.idle_time, first_arrival,
            )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    config = _config(args)
    tape = RandomTape(args.seed)
    init = _parse_init(args.init)
    horizon = args.horizon if args.horizon is not None else 1e5
    rows = []
    for r in range(args.runs):
        run_tape = tape.derive(r)
        if args.model in ("explicit", "polling"):
            if init[0] == "const":
                raise SystemExit("constant-potential init applies to --model potential")
            customers = ()
            res = run_until_regeneration(
                config, run_tape, customers, horizon=horizon,
                model="greedy" if args.model == "explicit" else "polling",
                record=bool(args.events_out and r == 0),
            )
            if args.events_out and r == 0:
                write_event_log(res.log, args.events_out, res.log_counts)
        else:
            res = _potential_regen(config, run_tape, init, horizon)
        rows.append([
            r, res.tau, res.censored, res.served,
            res.serving_time, res.moving_time, res.idle_time, args.model,
        ])
    header = _header_line("simulate", args, {"model": args.model, "init": args.init})
    cols = ["run_id", "tau", "censored", "n_served", "busy_time", "travel_time",
            "idle_time", "model"]
    _write_csv(args.out, header, cols, rows)
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.simulate_figure([row[1] for row in rows], fig)
    return 0


def cmd_couple(args) -> int:
    config = _config(args)
    tape = RandomTape(args.seed)
    init = _parse_init(args.init)
    horizon = args.horizon if args.horizon is not None else 1e3
    reports = []
    ok_count = 0
    for r in range(args.runs):
        run_tape = tape.derive(r)
        if init[0] == "const":
            profile = CircleProfile.constant(-init[1])
            start = 0.0
        elif init[0] == "file":
            profile = read_potential(init[1])
            if not isinstance(profile, CircleProfile):
                raise SystemExit("couple needs a circle potential file")
            _ok, (_x_min, x_max) = is_proper(profile, 0.0, 0.0)
            start = x_max  # serve at the maximum so the state is proper
        else:
            raise SystemExit("couple needs a non-empty potential (const:<N> or file:)")
        run = coupling_mod.run_coupled(
            profile, start, start, config, run_tape,
            horizon=horizon, tol=args.tolerance, seed=r,
        )
        ok_count += run.identities_ok
        reports.append(run.to_json_dict())
    obj = {
        "header": {
            "version": __version__,
            "cmd": "couple",
            "config": config.describe(),
            "seed": args.seed,
            "runs": args.runs,
            "horizon": horizon,
            "tolerance": args.tolerance,
            "init": args.init,
        },
        "identities_ok_count": ok_count,
        "reports": reports,
    }
    _write_json(args.out, obj)
    if ok_count != args.runs:
        print(f"gate failure: identities_ok on {ok_count}/{args.runs} runs", file=sys.stderr)
        return 1
    return 0


def cmd_drift(args) -> int:
    config = _config(args)
    tape = RandomTape(args.seed)
    constants = lyap.derive_constants(args.lam, args.mu, args.speed, args.b_star)
    b_values = [float(x) for x in args.B.split(",") if x]
    rows_out = []
    rows = lyap.drift_experiment(b_values, args.runs, constants, config, tape)
    for row in rows:
        rows_out.append([
            row.b_target, row.n_runs, row.failures, row.rho_hat,
            row.ci_low, row.ci_high, row.mean_elapsed, row.mean_moving,
            row.mean_serving, row.mean_departures,
        ])
    header = _header_line("drift", args, {"B": args.B, "b_star": args.b_star})
    cols = [
        "B_target", "n_runs", "failures", "rho_hat", "ci_low", "ci_high",
        "mean_T", "mean_M", "mean_S", "mean_N_served",
    ]
    _write_csv(args.out, header, cols, rows_out)
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.drift_figure(rows, fig)
    for prev, cur in zip(rows, rows[1:]):
        slack = (prev.ci_high - prev.ci_low) / 2 + (cur.ci_high - cur.ci_low) / 2
        if cur.rho_hat > prev.rho_hat + slack:
            print(
                "gate failure: rho_hat not non-increasing in B "
                f"({prev.b_target} -> {cur.b_target})",
                file=sys.stderr,
            )
            return 1
    return 0


def cmd_regen(args) -> int:
    config = _config(args)
    tape = RandomTape(args.seed)
    constants = lyap.derive_constants(args.lam, args.mu, args.speed, args.b_star)
    result = lyap.small_B_regeneration(constants, config, tape, args.runs)
    ci_half = (result.ci_high - result.ci_low) / 2.0
    gate_ok = result.p_hat >= result.bound - 3.0 * ci_half
    header = _header_line("regen", args, {"b_star": args.b_star})
    cols = [
        "b_star", "speed", "n_runs", "successes", "p_hat",
        "ci_low", "ci_high", "bound", "time_limit", "gate",
    ]
    _write_csv(args.out, header, cols, [[
        args.b_star, args.speed, result.n_runs, result.successes, result.p_hat,
        result.ci_low, result.ci_high, result.bound, result.time_limit,
        "pass" if gate_ok else "fail",
    ]])
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.regen_figure(result, fig)
    if not gate_ok:
        print(
            f"gate failure: p_hat {result.p_hat:.5f} below bound {result.bound:.5f} - 3*CI",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_blocks(args) -> int:
    config = _config(args)
    tape = RandomTape(args.seed)
    horizon = args.horizon if args.horizon is not None else 1e4
    reports, attempts, successes = blocks_mod.transience_experiment(
        args.runs, config, tape, horizon=horizon, max_levels=args.max_level,
    )
    rows = []
    bad_post_settle = 0
    for run_id, rep in enumerate(reports):
        for epoch_id, epoch in enumerate(rep.epochs):
            for rec in epoch.records:
                rows.append([
                    run_id, rec.level, rec.start_time, rec.start_pos, rec.depth,
                    rec.served, rec.advance, rec.duration, rec.traveled,
                    rec.success, rec.failed_condition, epoch_id,
                ])
        if not rep.censored and not (rep.strong_transience_ok and rep.travel_bound_ok):
            bad_post_settle += 1
    header = _header_line("blocks", args, {
        "max_level": args.max_level,
        "scope": blocks_mod.SCOPE_NOTE.replace(",", ";"),
    })
    cols = [
        "run_id", "j", "L_j", "Z_j", "N_j", "Q_j", "X_j", "M_j", "V_j",
        "success", "failed_condition", "epoch",
    ]
    _write_csv(args.out, header, cols, rows)
    settled = sum(1 for rep in reports if not rep.censored)
    print(f"settled runs: {settled}/{args.runs}", file=sys.stderr)
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.blocks_figure(attempts, successes, fig)
    if bad_post_settle:
        print(
            f"gate failure: strong-transience checks failed on {bad_post_settle} settled runs",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_walk(args) -> int:
    tape = RandomTape(args.seed)
    if args.up_step is not None and args.down_step is not None:
        up, down = args.up_step, args.down_step
    else:
        constants = lyap.derive_constants(args.lam, args.mu, args.speed, args.b_star)
        up = args.up_step if args.up_step is not None else constants.deadline_factor
        down = args.down_step if args.down_step is not None else constants.contraction
    result = lyap.dominating_walk(args.s, args.rho, up, down, tape, args.runs)
    hist: dict[int, int] = {}
    for sample in result.samples:
        hist[sample] = hist.get(sample, 0) + 1
    header = _header_line("walk", args, {
        "rho": args.rho, "s": args.s, "up_step": up, "down_step": down,
        "censored": result.censored,
    })
    _write_csv(args.out, header, ["sigma", "count"],
               [[k, hist[k]] for k in sorted(hist)])
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.walk_figure(result, fig)
    return 0


def busy_period_samples(model: str, config: ModelConfig, tape: RandomTape,
                        n_runs: int, horizon: float = 1e5):
    """First-busy-period length and customers served, per independent run."""
    lengths = []
    served = []
    for r in range(n_runs):
        run_tape = tape.derive(r)
        if model == "explicit":
            res = run_until_regeneration(config, run_tape, horizon=horizon)
        else:
            res = _potential_regen(config, run_tape, ("empty", None), horizon)
        if res.censored:
            continue
        lengths.append(res.busy_length)
        served.append(res.served)
    return lengths, served


def cmd_compare(args) -> int:
    from scipy import stats

    config = _config(args)
    tape = RandomTape(args.seed)
    horizon = args.horizon if args.horizon is not None else 1e5
    len_a, srv_a = busy_period_samples("explicit", config, tape.derive(1), args.runs, horizon)
    len_b, srv_b = busy_period_samples("potential", config, tape.derive(2), args.runs, horizon)
    rows = []
    failing = None
    for metric, a, b in (
        ("busy_period_length", len_a, len_b),
        ("customers_served", srv_a, srv_b),
    ):
        ks = stats.ks_2samp(a, b)
        ok = ks.pvalue >= 0.01
        rows.append([metric, len(a), len(b), ks.statistic, ks.pvalue, "pass" if ok else "fail"])
        if not ok and failing is None:
            failing = metric
    header = _header_line("compare", args, {"significance": 0.01})
    cols = ["metric", "n_explicit", "n_potential", "ks_stat", "p_value", "gate"]
    _write_csv(args.out, header, cols, rows)
    if args.plot:
        fig = _figure_path(args.out)
        if fig:
            from . import plots
            plots.compare_figure(len_a, len_b, ("explicit", "potential"),
                                 "busy_period_length", fig)
    if failing:
        print(f"gate failure: KS test rejected equality on {failing}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def _common_options(lam=0.5, runs=100, init="empty") -> argparse.ArgumentParser:
    # one parent per subcommand: shared parents make set_defaults leak across
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lambda", dest="lam", type=float, default=lam,
                        help=f"arrival rate (default {lam})")
    common.add_argument("--mu", type=float, default=1.0, help="service rate")
    common.add_argument("--speed", type=float, default=1.0, help="server speed")
    common.add_argument("--service", default="exp",
                        help="service law: exp, det, or geom:<p>")
    common.add_argument("--seed", type=int, default=1, help="64-bit unsigned seed")
    common.add_argument("--runs", type=int, default=runs, help="number of runs")
    common.add_argument("--horizon", type=float, default=None,
                        help="simulation horizon (per-command default)")
    common.add_argument("--init", default=init,
                        help="initial state: empty, const:<depth>, file:<path>")
    common.add_argument("--out", default="-", help="output path, - for stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="tabular output format (couple always writes json)")
    common.add_argument("--plot", action="store_true",
                        help="render a matplotlib figure next to the output file")
    common.add_argument("--b-star", type=float, default=1.0,
                        help="small-badness threshold")
    common.add_argument("--config", default=None, metavar="PATH",
                        help="JSON file of flag defaults (explicit flags win)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greedyserver",
        description="greedy-server simulator and analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[_common_options()],
                       help="regeneration-cycle summaries for one server model")
    p.add_argument("--model", choices=("explicit", "potential", "polling"),
                   default="explicit")
    p.add_argument("--polling-halt-when-empty", action="store_true",
                   help="freeze the polling server when the system is empty")
    p.add_argument("--events-out", default=None,
                   help="CSV event log of the first run")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("couple", parents=[_common_options(init="const:1")],
                       help="three-way coupling verification reports")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("drift", parents=[_common_options(runs=1000)],
                       help="contraction failure table over B values")
    p.add_argument("--B", default="10,20,40", help="comma-separated B values")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("regen", parents=[_common_options(runs=10000)],
                       help="fast-regeneration probability vs the closed-form bound")
    p.set_defaults(func=cmd_regen)

    p = sub.add_parser("blocks", parents=[_common_options(lam=1.0, runs=200)],
                       help="multi-scale block detection on the line")
    p.add_argument("--max-level", type=int, default=9)
    p.set_defaults(func=cmd_blocks)

    p = sub.add_parser("walk", parents=[_common_options(runs=10000)],
                       help="dominating-walk hitting-time histogram")
    p.add_argument("--rho", type=float, default=0.001, help="up-step probability")
    p.add_argument("--s", type=float, default=1.0, help="walk start")
    p.add_argument("--up-step", type=float, default=None)
    p.add_argument("--down-step", type=float, default=None)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("compare", parents=[_common_options(runs=10000)],
                       help="explicit vs potential busy-period KS comparison")
    p.set_defaults(func=cmd_compare)

    return parser


def _apply_config_file(argv: list) -> list:
    """Turn ``--config FILE`` into injected flags; explicit flags still win.

    The file holds a JSON object keyed by flag names ("lambda", "runs",
    "service", ...); its entries are inserted right after the subcommand so
    anything typed on the command line overrides them.
    """
    if "--config" not in argv:
        return argv
    argv = list(argv)
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ValueError("--config needs a file path")
    path = argv[i + 1]
    del argv[i:i + 2]
    with open(path, "r", encoding="utf-8") as fh:
        conf = json.load(fh)
    if not isinstance(conf, dict):
        raise ValueError("config file must hold a JSON object")
    injected = []
    for key in sorted(conf):
        flag = "--" + str(key).replace("_", "-")
        val = conf[key]
        if isinstance(val, bool):
            if val:
                injected.append(flag)
        else:
            injected.extend([flag, str(val)])
    return argv[:1] + injected + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console() -> None:
    sys.exit(main())
