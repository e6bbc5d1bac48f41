"""
Open-loop stiffness curves
==========================

The follower palpates and retracts a specimen on a scripted trajectory with
no hand in the loop. Each estimator's force is binned against displacement
and split into loading and unloading branches.
"""

import sys
from pathlib import Path

from teleopsim import config as cf
from teleopsim import experiments as ex
from teleopsim import trajectory as tr

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
cfg = cf.load(overrides={"repetitions": 1})

# %%
# 1 repetition over 3 materials keeps this quick; the full study uses 3.
res = ex.cmd_open_loop(cfg, out, estimators=["fs", "d", "v"])
print(f"{res.n_runs} runs -> {res.out}")

# %%
# At half the peak displacement, compare the two branches. The ideal sensor
# shows the tissue's own viscous loop (loading above unloading). The
# low-passed dynamic model lags, so its unloading branch sits above. The
# saturating vision surrogate flattens once the true force exceeds its limit.
for mv in cfg["open_loop"]["movements"]:
    mid = tr.build_open_loop(mv).segments[0].xf / 2
    print(f"\n{mv}, displacement {1000 * mid:+.1f} mm")
    for est in ("fs", "d", "v"):
        lo, un = res.extra["curves"][(est, mv)].at(mid)
        print(f"  {est:3s} loading {abs(lo):6.3f} N  unloading {abs(un):6.3f} N")
    peak = tr.build_open_loop(mv).segments[0].xf
    lo, _ = res.extra["curves"][("v", mv)].at(0.95 * peak)
    print(f"  v at 95% of peak: {abs(lo):.3f} N")

print("\nfigure:", out / "open_loop" / "stiffness.svg")
