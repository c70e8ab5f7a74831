"""
Bounds along a moderate-deviation schedule
==========================================

u = eps^0.8, so u / eps grows while u^3 / eps^2 shrinks.
"""
from mdev.cli import Schedule, validate_schedule
from mdev.mdp import MCConfig, bound_comparison_run
from mdev.model import get_model

model = get_model("linear-sin")
sched = Schedule(eps_list=(0.05, 0.02, 0.01, 0.005), a=1.0, delta=0.8, lam=1.0)
print("schedule problems:", validate_schedule(sched) or "none")
print("delta=0.5 gives:", validate_schedule(Schedule(delta=0.5)))

cfg = MCConfig(n_rep=20_000, grid_n=64)
for theorem in ("T1", "T2", "T3", "T4"):
    for r in bound_comparison_run(model, sched, cfg, theorem):
        print(f"{theorem} eps={r.epsilon:<6g} x={r.x:7.3f} value={r.ratio_or_gap:.5f} "
              f"se={r.se_combined:.1e} ok={r.meets_bound}")
