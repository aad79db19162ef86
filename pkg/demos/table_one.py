"""Largest certified radius gamma* for every condition on the 4-state benchmark.

Run:  python demos/table_one.py   (about a minute)
"""

import time

from lpvcert import bisect_gamma, case_study

BRACKETS = {
    "polyqs_l12": (0.1, 2.0), "polyqs_l13": (0.1, 2.0), "polyqs_l14": (0.1, 2.0),
    "det_thm1": (1.0, 8.0), "det_rem1": (1.0, 8.0),
    "stab_thm3": (0.5, 2.0), "synth_t43": (0.5, 2.0), "synth_t44": (0.5, 2.0), "synth_daafouz": (0.5, 2.0),
}

if __name__ == "__main__":
    print(f"{'condition':<15}{'gamma*':>8}{'solves':>8}{'inconcl.':>10}{'time':>8}")
    for cond, (lo, hi) in BRACKETS.items():
        t0 = time.perf_counter()
        r = bisect_gamma(cond, case_study, lo, hi, tol=1e-3)
        print(f"{cond:<15}{r.gamma_star:>8.4f}{len(r.evaluations):>8}{r.inconclusive_count:>10}"
              f"{time.perf_counter() - t0:>7.1f}s")
