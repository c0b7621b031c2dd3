"""Recompute CER and PCE for the benchmark inputs and the per-grid cost column.

    python scripts/metric_tables.py [--csv]
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

from gridcollage.metrics import cost_per_1k, metric_row, report_csv, report_table
from gridcollage.vlm.cost import LABEL_TOKENS, cost_model_for

INPUTS = Path(__file__).parent / "data" / "benchmark_inputs.csv"


def load(path=INPUTS):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", action="store_true", help="emit CSV instead of an aligned table")
    ap.add_argument("--inputs", default=str(INPUTS))
    args = ap.parse_args()

    rows = load(args.inputs)
    ref = {r["dataset"]: (float(r["accuracy"]), float(r["cost_per_1k"])) for r in rows if r["n"] == "1"}
    out = []
    for r in rows:
        ref_acc, ref_cost = ref[r["dataset"]]
        n = int(r["n"])
        row = metric_row(r["dataset"], n, float(r["accuracy"]), float(r["cost_per_1k"]),
                         *((ref_acc, ref_cost) if n > 1 else (None, None)))
        out.append(replace(row, dataset=f"{r['dataset']} [{r['arrangement']}]"))
    print(report_csv(out) if args.csv else report_table(out), end="")

    model = cost_model_for(LABEL_TOKENS["ImageNet-1K"])
    print("\ncost per 1k images by grid side (ImageNet-1K label list)")
    for n in range(1, 6):
        print(f"  {n}x{n}  ${cost_per_1k(model, n):6.2f}")


if __name__ == "__main__":
    main()
