"""Centre variance of the 4-d membrane model against g log N.

    python3 scripts/variance_ladder.py 3 4 5 6 7 8 10 12 16
"""
import math
import sys

from membrane_lab import theory
from membrane_lab.solver import SolverCache
from membrane_lab.validation import variance_ladder


def main(ns):
    ns = [int(n) for n in ns] or [3, 4, 5, 6, 7, 8]
    ladder = variance_ladder(ns, cache=SolverCache(".membrane_cache"))
    g = theory.g_const()
    print(f"{'N':>4s} {'Var(phi_0)':>12s} {'g log N':>10s} {'diff':>8s}")
    for n, var in ladder:
        print(f"{int(n):4d} {var:12.6f} {g * math.log(n):10.6f} {var - g * math.log(n):8.4f}")


if __name__ == "__main__":
    main(sys.argv[1:])
