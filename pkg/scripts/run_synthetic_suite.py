"""Run every scenario on a synthetic preset and write artifacts plus a comparison table.

    python scripts/run_synthetic_suite.py --seed 42 --out runs/suite
    python scripts/run_synthetic_suite.py --preset severe --scenarios static morph de_baseline
"""

import argparse
import csv
from pathlib import Path

from morphdrift.active import ALConfig
from morphdrift.cli import compare_runs
from morphdrift.experiment import ExperimentConfig, prepare, preset, run, train_initial, write_artifacts
from morphdrift.metrics import summarize
from morphdrift.morph import MorphConfig

DEFAULT_SCENARIOS = ["static", "morph", "al_monthly", "al_alternate", "al_plus_morph",
                     "de_baseline", "de_baseline_static"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="default")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--tau-m", type=float, default=0.6)
    ap.add_argument("--budget", type=int, default=25)
    ap.add_argument("--scenarios", nargs="+", default=DEFAULT_SCENARIOS)
    ap.add_argument("--out", default="runs/suite")
    args = ap.parse_args()

    out_root = Path(args.out)
    stream = initial = None
    dirs = []
    for scenario in args.scenarios:
        cfg = ExperimentConfig(scenario=scenario, seed=args.seed, synthetic=preset(args.preset),
                               synthetic_preset=args.preset, morph=MorphConfig(tau_m=args.tau_m),
                               al=ALConfig(args.budget), output_dir=str(out_root / scenario))
        if stream is None:
            stream = prepare(cfg)
        if initial is None and not scenario.startswith("de_"):
            initial, epochs = train_initial(stream, cfg.model, cfg.seed)
            print(f"initial model: {epochs} epochs")
        res = run(cfg, stream=stream, initial=initial)
        write_artifacts(res, cfg, cfg.output_dir)
        s = summarize(res.history)
        print(f"{scenario:20s} F1 {s.mean_f1:.4f}  FNR {s.mean_fnr:.4f}  FPR {s.mean_fpr:.4f}  "
              f"accuracy {s.mean_accuracy:.4f}")
        dirs.append(cfg.output_dir)

    rows, warnings = compare_runs(dirs)
    for w in warnings:
        print("warning:", w)
    with open(out_root / "comparison.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    print(f"comparison table: {out_root / 'comparison.csv'}")


if __name__ == "__main__":
    main()
