"""Run the ablation benchmark once and freeze its numbers as the test oracle.

    python scripts/pin_ablation_reference.py [--seeds 0 1 2]

Writes tests/data/ablation_reference.json.  Re-run only when the model,
trainer or generator changes on purpose.
"""

import argparse
import json
import time
from pathlib import Path

from wsground.config import parse_config
from wsground.evaluate import ablation_benchmark

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--config", default=str(ROOT / "configs" / "benchmark.ini"))
    ap.add_argument("--out", default=str(ROOT / "tests" / "data" / "ablation_reference.json"))
    args = ap.parse_args()

    cfg = parse_config(args.config, env={})
    t0 = time.perf_counter()
    tables = ablation_benchmark(cfg.world, cfg.train, args.seeds)
    elapsed = time.perf_counter() - t0
    runs = {}
    for seed, table in tables.items():
        runs[str(seed)] = {v: {"accuracy": table.accuracy(v), "covered_accuracy": table.covered(v),
                               "correct": table.rows[v].num_correct, "total": table.rows[v].num_total}
                           for v in table.rows}
    variants = list(next(iter(tables.values())).rows)
    mean = {v: sum(runs[s][v]["accuracy"] for s in runs) / len(runs) for v in variants}
    mean_cov = {v: sum(runs[s][v]["covered_accuracy"] for s in runs) / len(runs) for v in variants}
    doc = {"config": Path(args.config).name, "seeds": args.seeds, "runs": runs,
           "mean_accuracy": mean, "mean_covered_accuracy": mean_cov,
           "margins": {"nce_distill_minus_nce": mean["nce_distill"] - mean["nce"],
                       "nce_minus_margin": mean["nce"] - mean["margin"],
                       "covered_nce_distill_minus_nce": mean_cov["nce_distill"] - mean_cov["nce"]},
           "seconds": round(elapsed, 1)}
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc["margins"], indent=2), f"{elapsed:.0f}s")


if __name__ == "__main__":
    main()
