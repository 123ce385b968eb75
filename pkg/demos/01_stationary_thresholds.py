"""
Threshold structure of the stationary sampling policy
=====================================================

One energy-harvesting source, five channel states, a known arrival rate.
Discounted value iteration gives the optimal sample/idle rule, and the rule
turns out to be a pair of thresholds: sample once the age reaches K_th(E, C),
or once the channel's success probability reaches p_th(E, K).
"""
import numpy as np

from aoi_eh.harness import load_preset, solve_tables

cfg = load_preset("fig2")
model = cfg.models[0]
print(f"B={model.B}  E_s={model.E_s}  K_max={model.K_max}  p={model.channel.p}")

tables = solve_tables(cfg)

# %%
# Age thresholds fall as the buffer fills, as energy becomes more plentiful,
# and as the channel gets better (columns run from the best channel to the worst).
for lam, tab in tables.items():
    th = tab["thresholds"]
    print(f"\nlambda = {lam}: threshold in K: {tab['in_K']}, threshold in p: {tab['in_p']}")
    print("  E  " + "  ".join(f"C{c}" for c in range(model.m)))
    for E in range(model.E_s, model.B + 1, 2):
        row = "  ".join(f"{v:>3.0f}" if np.isfinite(v) else "inf" for v in th.K_th[E])
        print(f"  {E}  {row}")

# %%
# The value function itself grows with age at every (E, C).
vf = tables[0.5]["value"]
print("\nJ nondecreasing in K:", bool(np.all(np.diff(vf.J, axis=1) >= 0)))
