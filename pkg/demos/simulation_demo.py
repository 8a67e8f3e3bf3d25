"""A desk-sized run of the simulation study.

Compares one-step and two-step weights in both the randomized and the
observational setting and prints RMSE, bias and ESS tables. Pass a
replication count as the first argument (default 40); 200 replications take
a little over a minute per setting on one core.

Run with ``python3 demos/simulation_demo.py [reps]``.
"""

import sys
import time

from onestep.sim import SimConfig, run_study

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 40

for setting in ("randomized", "observational"):
    start = time.perf_counter()
    report = run_study(SimConfig(setting, replications=reps))
    print(report.table("rmse"))
    print()
    print(report.table("bias"))
    print()
    print(f"{'method':<8}{'mean ESS':>10}{'mean multiplier':>18}")
    for name, m in report.methods.items():
        print(f"{name:<8}{m.mean_ess:>10.1f}{m.mean_multiplier:>18.4g}")
    print(f"largest balance violation {report.max_violation:.1e}; "
          f"{time.perf_counter() - start:.1f}s\n")
