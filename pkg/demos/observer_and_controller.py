"""Solve, reconstruct a gain, verify it, and simulate the loop.

Run:  python demos/observer_and_controller.py
"""

import numpy as np

from lpvcert import case_study, check_vertex_certificate, gain_from_certificate, monte_carlo_descent, solve_condition
from lpvcert.lpv import simulate


def show(cond, gamma, mode):
    system = case_study(gamma)
    out, cert = solve_condition(cond, system, gamma=gamma)
    print(f"{cond} at gamma={gamma}: {out.status} (margin {out.margin:.3g})")
    if cert is None:
        return
    gain = gain_from_certificate(system, cert)
    vc = check_vertex_certificate(system, cert, gain=gain)
    mc = monte_carlo_descent(system, cert, gain, num_seq=1000, horizon=50, seed=42, a3=0.0)
    print(f"  {gain.kind} gain ({gain.recipe}), min block margin {vc.min_margin:.3g}, "
          f"worst descent ratio {mc.mc_worst_ratio:.3g}, passed={vc.passed and mc.passed}")
    rng = np.random.default_rng(0)
    p = system.params.sample(rng, 41)[:, 0]
    tr = simulate(system, np.ones(4), p, gain=gain, mode=mode)
    print(f"  |x_0| = {np.linalg.norm(tr.states[0]):.3g}  ->  |x_40| = {np.linalg.norm(tr.states[-1]):.3g}")


if __name__ == "__main__":
    show("det_thm1", 4.0, "error_system")
    show("synth_t43", 1.0, "closed_loop")
    show("stab_thm3", 1.0, "closed_loop")        # needs p_{k+1}; simulate supplies it
    show("synth_t43", 1.3, "closed_loop")        # above gamma*: no certificate
