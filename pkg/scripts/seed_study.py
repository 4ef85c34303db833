"""Repeat scenario pairs over many root seeds to see how stable each gap is.

Prints one row per seed plus a summary, e.g.

    python scripts/seed_study.py --seeds 0-9 --pair static morph
    python scripts/seed_study.py --preset severe --pair de_baseline_static de_baseline
    python scripts/seed_study.py --preset families --top-k 3 --pair static morph
"""

import argparse

import numpy as np

from morphdrift.experiment import ExperimentConfig, prepare, preset, run, train_initial
from morphdrift.metrics import summarize
from morphdrift.morph import MorphConfig


def parse_seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def make_config(scenario, seed, args):
    kw = {}
    if args.top_k is not None:
        kw = dict(scenario="family_limited", inner_scenario=scenario, top_k=args.top_k)
    else:
        kw = dict(scenario=scenario)
    return ExperimentConfig(seed=seed, synthetic=preset(args.preset), synthetic_preset=args.preset,
                            morph=MorphConfig(tau_m=args.tau_m), **kw)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="default")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--pair", nargs=2, default=["static", "morph"], metavar=("BASE", "OTHER"))
    ap.add_argument("--top-k", type=int)
    ap.add_argument("--tau-m", type=float, default=0.6)
    args = ap.parse_args()

    base, other = args.pair
    gaps = []
    print(f"seed  {base}_f1  {other}_f1  gap  {base}_last_acc")
    for seed in parse_seeds(args.seeds):
        stream = prepare(make_config(base, seed, args))
        initial = None
        results = {}
        for scenario in (base, other):
            cfg = make_config(scenario, seed, args)
            if initial is None and not scenario.startswith("de_"):
                initial, _ = train_initial(stream, cfg.model, seed)
            results[scenario] = run(cfg, stream=stream, initial=initial).history
        fb, fo = summarize(results[base]).mean_f1, summarize(results[other]).mean_f1
        gaps.append(fo - fb)
        print(f"{seed:4d}  {fb:.4f}  {fo:.4f}  {fo - fb:+.4f}  {results[base][-1].accuracy:.3f}", flush=True)
    g = np.array(gaps)
    print(f"gap mean {g.mean():+.4f}  min {g.min():+.4f}  max {g.max():+.4f}  over {len(g)} seeds")


if __name__ == "__main__":
    main()
