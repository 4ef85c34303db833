"""Command line entry point: ``morphdrift {run,compare,gen-synthetic,grad-check}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal invariant
violation. ``MORPHDRIFT_LOG_LEVEL`` sets log verbosity (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from morphdrift.errors import ConfigError, DataError, InvariantError, SequencingError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("morphdrift")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphdrift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment and write its artifacts")
    r.add_argument("--config", help="YAML or JSON experiment config; flags override it")
    r.add_argument("--scenario")
    r.add_argument("--seed", type=int)
    src = r.add_mutually_exclusive_group()
    src.add_argument("--data", help="stream file (csv or ndjson)")
    src.add_argument("--synthetic", metavar="PRESET", help="synthetic preset: default, severe or families")
    r.add_argument("--format", choices=("csv", "ndjson"))
    r.add_argument("--top-k", type=int, help="family_limited: keep the top-k training malware families")
    r.add_argument("--inner-scenario", help="family_limited: scenario run on the limited stream")
    r.add_argument("--tau-m", type=float)
    r.add_argument("--tau-b", type=float)
    r.add_argument("--n-m-cap", type=int)
    r.add_argument("--lambda-u", type=float)
    r.add_argument("--fine-tune-epochs", type=int)
    r.add_argument("--budget", type=int, help="annotations per active-learning update")
    r.add_argument("--hidden", type=_int_list, help="hidden layer sizes, e.g. 512,384,256,128")
    r.add_argument("--dropout", type=float)
    r.add_argument("--batch-size", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--max-epochs", type=int)
    r.add_argument("--patience", type=int)
    r.add_argument("--out", help="output directory")

    c = sub.add_parser("compare", help="align metrics of several runs against the first")
    c.add_argument("run_dirs", nargs="+")
    c.add_argument("--out", help="write the comparison CSV here instead of stdout")

    g = sub.add_parser("gen-synthetic", help="write a synthetic drift stream file")
    g.add_argument("--preset", default="default")
    g.add_argument("--config", help="YAML/JSON mapping of SyntheticConfig fields (overrides the preset)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "ndjson"))

    k = sub.add_parser("grad-check", help="compare backprop against finite differences")
    k.add_argument("--models", type=int, default=20)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--tol", type=float, default=1e-4)
    return p


def _experiment_config(args):
    from morphdrift.experiment import ExperimentConfig, load_config_file, preset

    raw = load_config_file(args.config) if args.config else {}
    cfg = ExperimentConfig.from_dict(raw)
    for attr, flag in (("scenario", "scenario"), ("seed", "seed"), ("top_k", "top_k"),
                       ("inner_scenario", "inner_scenario"), ("data_format", "format"), ("output_dir", "out")):
        if getattr(args, flag) is not None:
            setattr(cfg, attr, getattr(args, flag))
    if args.data is not None:
        cfg.data_path, cfg.synthetic, cfg.synthetic_preset = args.data, None, None
    if args.synthetic is not None:
        cfg.synthetic, cfg.synthetic_preset, cfg.data_path = preset(args.synthetic), args.synthetic, None
    for attr, flag in (("tau_m", "tau_m"), ("tau_b", "tau_b"), ("n_m_cap", "n_m_cap"),
                       ("lambda_u", "lambda_u"), ("fine_tune_epochs", "fine_tune_epochs")):
        if getattr(args, flag) is not None:
            setattr(cfg.morph, attr, getattr(args, flag))
    if args.budget is not None:
        cfg.al.budget_per_update = args.budget
    for attr, flag in (("hidden_dims", "hidden"), ("dropout", "dropout"), ("batch_size", "batch_size"),
                       ("learning_rate", "lr"), ("max_epochs", "max_epochs"), ("patience", "patience")):
        if getattr(args, flag) is not None:
            setattr(cfg.model, attr, getattr(args, flag))
    return cfg


def cmd_run(args) -> int:
    from morphdrift.experiment import run, write_artifacts
    from morphdrift.metrics import summarize

    cfg = _experiment_config(args)
    cfg.validate()
    if cfg.output_dir is None:
        raise ConfigError("output directory is required (--out or output_dir)")
    result = run(cfg)
    out = write_artifacts(result, cfg, cfg.output_dir)
    s = summarize(result.history)
    print(f"{cfg.scenario}: {len(result.history)} months, mean F1 {s.mean_f1:.4f}, "
          f"FNR {s.mean_fnr:.4f}, FPR {s.mean_fpr:.4f} -> {out}")
    return EXIT_OK


def compare_runs(run_dirs: list[str]) -> tuple[list[list], list[str]]:
    """Rows of an aligned comparison table plus warnings.

    Each non-reference run contributes f1/fpr/fnr and deltas against the
    first directory. The final row holds the means.
    """
    from morphdrift.metrics import read_metrics_csv

    histories = [read_metrics_csv(Path(d) / "metrics.csv") for d in run_dirs]
    ref_months = [r.month for r in histories[0]]
    for d, h in zip(run_dirs[1:], histories[1:]):
        months = [r.month for r in h]
        if months != ref_months:
            only_ref = sorted(set(ref_months) - set(months))
            only_run = sorted(set(months) - set(ref_months))
            raise DataError(f"months of {d} do not match {run_dirs[0]}: "
                            f"missing {only_ref}, extra {only_run}" if (only_ref or only_run)
                            else f"months of {d} are ordered differently from {run_dirs[0]}")

    warnings = []
    seeds = {}
    for d in run_dirs:
        cfg_path = Path(d) / "config.json"
        if cfg_path.exists():
            meta = json.loads(cfg_path.read_text()).get("stream_meta", {})
            seeds[d] = meta.get("stream_seed", meta.get("source"))
    if len(set(map(str, seeds.values()))) > 1:
        warnings.append("runs use differing stream seeds/sources: "
                        + ", ".join(f"{d}={s}" for d, s in seeds.items()))

    header = ["month"]
    for i, d in enumerate(run_dirs):
        name = Path(d).name or d
        header += [f"{name}:f1", f"{name}:fpr", f"{name}:fnr"]
        if i:
            header += [f"{name}:delta_f1", f"{name}:delta_fpr", f"{name}:delta_fnr"]
    rows = [header]
    for m_idx, month in enumerate(ref_months):
        row = [month]
        ref = histories[0][m_idx]
        for i, h in enumerate(histories):
            r = h[m_idx]
            row += [r.f1, r.fpr, r.fnr]
            if i:
                row += [r.f1 - ref.f1, r.fpr - ref.fpr, r.fnr - ref.fnr]
        rows.append(row)
    n = len(ref_months)
    means = ["mean"] + [sum(r[j] for r in rows[1:]) / n for j in range(1, len(header))]
    rows.append(means)
    return rows, warnings


def cmd_compare(args) -> int:
    rows, warnings = compare_runs(args.run_dirs)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    from morphdrift.data import SyntheticConfig, gen_synthetic, write_stream
    from morphdrift.experiment import load_config_file, preset

    cfg = preset(args.preset)
    if args.config:
        overrides = load_config_file(args.config)
        try:
            cfg = SyntheticConfig(**{**asdict(cfg), **overrides})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    stream = gen_synthetic(cfg, args.seed)
    write_stream(stream, args.out, args.format)
    print(f"wrote {sum(len(b) for b in stream.test_months)} test samples over {len(stream.test_months)} months "
          f"to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from morphdrift.gradcheck import check_random_models

    worst = check_random_models(args.models, args.seed)
    ok = worst < args.tol
    print(f"{args.models} random models: max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "gen-synthetic": cmd_gen_synthetic, "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MORPHDRIFT_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, SequencingError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
