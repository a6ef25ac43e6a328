"""Command-line entry point: ``projadapt <command> ...``.

Exit codes: 0 all checks passed, 1 an invariant or acceptance check failed,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .checks import overall_status, verify_trace
from .experiments import (
    decay_experiment,
    drifting_plant_coefficient_box,
    drifting_plant_config,
    drifting_plant_summary,
    sweep,
)
from .io import (
    ConfigError,
    coefficient_box_from_dict,
    load_config,
    read_trace_csv,
    run_config,
    save_config,
    trace_from_csv,
    write_trace_csv,
)

log = logging.getLogger("projadapt")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if hasattr(x, "tolist"):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config).with_overrides(T=args.T, seed=args.seed)
    trace = run_config(cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out)
    print(f"wrote {trace.T - trace.t0 + 1} rows to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    try:
        cols = read_trace_csv(args.trace)
        trace = trace_from_csv(cols, cfg)
    except (ValueError, KeyError) as exc:
        print(f"malformed trace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    checks = verify_trace(trace)
    for c in checks:
        print(c.line())
    ok = overall_status(checks)
    print("overall:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_repro_example(args) -> int:
    cfg = drifting_plant_config(T=args.T or 1000)
    out = _out_dir(args.output)
    trace = run_config(cfg)
    write_trace_csv(trace, out / "drifting_plant_trace.csv")
    save_config(cfg, out / "drifting_plant_config.json")
    summary = drifting_plant_summary(trace)
    _write_json(out / "drifting_plant_summary.json", summary)
    for k in ("quiet", "disturbed", "recovered"):
        print(f"rms eps {k:>9}: {summary[k]:.6f}")
    ok = (summary["degrades_when_disturbed"] and summary["recovers_afterwards"]
          and summary["estimates_in_box"])
    print("overall:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = load_config(args.config).with_overrides(T=args.T)
    if cfg.coefficient_box is None:
        raise ConfigError("sweep needs a 'coefficient_box' in the config")
    rep = sweep(cfg, args.n_plants, seeds=args.seeds, master_seed=args.seed,
                workers=args.workers, run_seed=args.run_seed)
    out = _out_dir(args.output)
    with open(out / "sweep_plants.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["index", "a", "b", "admissible", "max_zero", "norm_A_b", "norm_B_3",
                     "norm_B_4", "prop1_passed", "prop1_worst_slack", "identity_residual"])
        for r in rep.results:
            wr.writerow([r.index, " ".join(repr(x) for x in r.plant.a),
                         " ".join(repr(x) for x in r.plant.b), int(r.admissible),
                         repr(r.max_zero), *(repr(float(x)) for x in r.crude_norms),
                         int(r.prop1_passed), repr(r.prop1_worst_slack),
                         repr(r.identity_residual)])
    summary = {
        "n_plants": args.n_plants,
        "admitted": len(rep.admitted),
        "excluded": [r.index for r in rep.excluded],
        "lambda_under": rep.lambda_under,
        "max_crude_norms": dict(zip(("A_b", "B_3", "B_4"), map(_finite, rep.max_crude_norms))),
        "prop1_failures": rep.prop1_failures,
        "passed": rep.passed,
    }
    if args.fit:
        ex = decay_experiment(cfg.coefficient_box, n_plants=args.n_plants, T=cfg.T,
                              master_seed=args.seed)
        summary["fit"] = {"lambda_hat": ex.fit.lam, "c": ex.fit.c,
                          "holdout_violations": ex.holdout_violations, "passed": ex.passed}
        summary["passed"] = summary["passed"] and ex.passed
    _write_json(out / "sweep_summary.json", summary)
    for r in rep.excluded:
        print(f"excluded plant {r.index}: zero of magnitude {r.max_zero:.4f}")
    print(json.dumps(summary, indent=2, default=_json_default))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_fit_bound(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        if cfg.coefficient_box is None:
            raise ConfigError("fit-bound needs a 'coefficient_box' in the config")
        cbox = cfg.coefficient_box
    elif args.box:
        try:
            cbox = coefficient_box_from_dict(json.loads(Path(args.box).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read coefficient box: {exc}") from None
    else:
        cbox = drifting_plant_coefficient_box()
    ex = decay_experiment(cbox, n_plants=args.n_plants, fit_seeds=args.fit_seeds,
                          holdout_seeds=args.holdout_seeds, T=args.T or 300,
                          master_seed=args.seed, search=not args.no_search,
                          pulses=args.pulses)
    summary = {
        "lambda_under": ex.lambda_under,
        "feasible": ex.fit.feasible,
        "lambda_hat": _finite(ex.fit.lam),
        "c": _finite(ex.fit.c),
        "fit_runs": ex.n_fit_runs,
        "holdout_runs": ex.n_holdout_runs,
        "holdout_violations": ex.holdout_violations,
        "holdout_worst_ratio": _finite(ex.holdout_worst_ratio),
        "excluded_plants": ex.excluded,
        "seconds": ex.seconds,
        "passed": ex.passed,
    }
    if args.output:
        _write_json(_out_dir(args.output) / "fit_bound.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK if ex.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="projadapt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one closed-loop experiment and write its trace")
    s.add_argument("config")
    s.add_argument("-o", "--output", default="trace.csv")
    s.add_argument("--seed", type=int)
    s.add_argument("--T", type=int, help="horizon override")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="check a trace file against the invariant suite")
    s.add_argument("trace")
    s.add_argument("config")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("repro-example", help="run the time-varying example")
    s.add_argument("-o", "--output", default="drifting_plant_out")
    s.add_argument("--T", type=int, help="horizon override (default 1000)")
    s.set_defaults(func=cmd_repro_example)

    s = sub.add_parser("sweep", help="closed-loop runs over plants drawn from a box")
    s.add_argument("config")
    s.add_argument("--n-plants", type=int, default=50)
    s.add_argument("--seeds", type=int, default=1, help="runs per plant")
    s.add_argument("--seed", type=int, default=0, help="master seed (plants and runs)")
    s.add_argument("--run-seed", type=int, help="separate seed for the runs")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--T", type=int, help="horizon override")
    s.add_argument("--fit", action="store_true", help="also fit the decay bound")
    s.add_argument("-o", "--output", default="sweep_out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit-bound", help="fit the exponential convolution bound")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--config", help="experiment config with a coefficient_box")
    g.add_argument("--box", help="JSON file holding a coefficient box")
    s.add_argument("--n-plants", type=int, default=50)
    s.add_argument("--fit-seeds", type=int, default=20)
    s.add_argument("--holdout-seeds", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--T", type=int, help="horizon (default 300)")
    s.add_argument("--pulses", action="store_true", help="add unit-pulse runs to the fit")
    s.add_argument("--no-search", action="store_true", help="random directions only")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_fit_bound)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for name in ("n_plants", "seeds", "workers", "fit_seeds", "holdout_seeds"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            print(f"--{name.replace('_', '-')} must be at least 1", file=sys.stderr)
            return EXIT_USAGE
    if getattr(args, "T", None) is not None and args.T < 1:
        print("--T must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
