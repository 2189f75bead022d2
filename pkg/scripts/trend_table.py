"""Print per-N ratio estimates next to the predicted exponents.

    python3 scripts/trend_table.py results/membrane-trend-*.summary.csv
"""
import math
import sys

from membrane_lab.experiments import read_rows


def main(paths):
    rows = []
    for path in paths:
        rows += read_rows(path)[1]
    rows.sort(key=lambda r: (r["observable"], str(r["eta"]), str(r["alpha"]),
                             str(r["beta"]), r["N"]))
    print(f"{'observable':20s} {'level':>16s} {'N':>4s} {'ratio':>8s} {'+-se':>7s} {'target':>7s}")
    for r in rows:
        level = ",".join(f"{k}={r[k]}" for k in ("eta", "alpha", "beta") if r[k] is not None)
        if r["ratio_mean"] is None:
            continue
        se = (r["ratio_std"] or 0.0) / math.sqrt(max(r["replicas_used"], 1))
        target = "" if r["prediction"] is None else f"{r['prediction']:.3f}"
        print(f"{r['observable']:20s} {level:>16s} {r['N']:4d} {r['ratio_mean']:8.3f} "
              f"{se:7.3f} {target:>7s}")


if __name__ == "__main__":
    main(sys.argv[1:])
