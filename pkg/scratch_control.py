"""Scratch: tracking harness validation (not shipped)."""
import time
import numpy as np
from coilsense import control, plant

pcfg = plant.default_plant_config(seed=0)
setup = control.TrackingSetup(plant_cfg=pcfg, load_nominal=None)
setup = control.resolve_setup(setup)
print("identified dyn:", setup.dyn)

t0 = time.time()
for scn in [
    plant.Scenario.force_tracking("sine", 0.2),
    plant.Scenario.force_tracking("triangle", 0.2),
    plant.Scenario.force_tracking("sine", 0.05),
    plant.Scenario.force_tracking("triangle", 0.05),
]:
    res = control.compare_tracking(scn, setup)
    line = f"{scn.name:24s}"
    for mode in control.MODES:
        r = res[mode]
        imp = f"{r.improvement_pct:5.1f}%" if r.improvement_pct is not None else "  --  "
        line += f" | {mode}: rmse={r.metrics.rmse:.4f} imp={imp}"
    print(line)
print(f"force tracking elapsed {time.time()-t0:.1f}s")

t0 = time.time()
setup_d = control.TrackingSetup(plant_cfg=pcfg, dyn=setup.dyn)
for f in (0.05, 0.2):
    scn = plant.Scenario.displacement_tracking(frequency_hz=f)
    setup_d.load_nominal = 1.15 * scn.load
    res = control.compare_tracking(scn, setup_d)
    line = f"{scn.name:24s}"
    for mode in control.MODES:
        r = res[mode]
        imp = f"{r.improvement_pct:5.1f}%" if r.improvement_pct is not None else "  --  "
        line += f" | {mode}: rmse={r.metrics.rmse*1000:.3f}mm imp={imp}"
    print(line)
print(f"disp tracking elapsed {time.time()-t0:.1f}s")

t0 = time.time()
res = control.run_perturbation(control.TrackingSetup(plant_cfg=pcfg, dyn=setup.dyn))
print("perturb:", {k: round(v, 5) for k, v in res.estimation.items()},
      "x_rmse=%.5f" % res.meta["x_rmse"], f"{time.time()-t0:.1f}s")
