"""Scratch: observer pipeline checks (not shipped)."""
import time
import numpy as np
from coilsense import model, observer, plant, signal as sig
from coilsense.ident import goodness

ind = plant.reference_inductance_params()
dyn = plant.reference_dynamic_params()
env = plant.default_envelope()
cfg = observer.make_observer_config(ind, env, dt=0.01, noise_L=0.01)
print("observer defaults: R=%.4g w_dyn=%.4g gamma=%.3g med_grad=%.4g" %
      (cfg.R, cfg.weights.w_dyn, cfg.weights.gamma, cfg.median_gradient))

# --- AC5: oracle equivalence
rng = np.random.default_rng(42)
t0 = time.time()
worst = 0.0
oracle_grid = np.linspace(env.F_min, env.F_max, 100000)
for _ in range(100):
    P = rng.uniform(0, 0.65)
    F_true = rng.uniform(0, 5)
    L = model.eval_inductance(ind, F_true, P) + rng.normal(0, 0.01)
    prior = np.clip(F_true + rng.normal(0, 0.2), 0, 5)
    f_solver = observer.solve_pseudo_measurement(L, P, prior, ind, cfg)
    costs = observer._composite_cost(oracle_grid, L, P, prior, ind, cfg.weights)
    f_oracle = oracle_grid[int(np.argmin(costs))]
    worst = max(worst, abs(f_solver - f_oracle))
tol = max(cfg.refine_tol, 5.0 / 100000)
print(f"AC5 worst |solver-oracle| = {worst:.3g} (tol {tol:.3g}), {time.time()-t0:.2f}s")

# --- AC7: cyclic estimation
scn = plant.Scenario.cyclic_estimation()
pcfg = plant.default_plant_config(seed=3)
t0 = time.time()
ds, truth = plant.run_scenario(scn, pcfg, return_truth=True)
print(f"scenario: {len(ds)} samples, F range [{truth['F'].min():.3f},{truth['F'].max():.3f}], "
      f"x range [{truth['x'].min():.4f},{truth['x'].max():.4f}], gen {time.time()-t0:.1f}s")
t0 = time.time()
est = observer.run_estimation(ds, ind, dyn, cfg)
print(f"estimation {time.time()-t0:.1f}s")
gF = goodness(est["F_hat"], ds.F)          # vs sensed load cell (paper-style)
gFt = goodness(est["F_hat"], truth["F"])   # vs truth
gx = goodness(est["x_hat"], truth["x"])
print(f"force  NRMSE vs meas {gF.nrmse:.2f}%  vs truth {gFt.nrmse:.2f}%  rmse {gFt.rmse:.4f} N")
print(f"disp   NRMSE {gx.nrmse:.2f}%  rmse {gx.rmse*1000:.2f} mm")

# --- AC6: branch disambiguation sweep
pcfg2 = plant.default_plant_config(seed=11)
p2 = plant.Plant(pcfg2, x0=0.10)
dt = 0.01
T = 20.0
n = int(T / dt)
x_lo, x_hi = 0.105, 0.175
filt = sig.design(sig.FilterSpec(3, 10, 100))
res0 = p2.step(0.2, dt, x_cmd=x_lo)
sig.prime(filt, res0.L_meas)
state = observer.reset(res0.F, cfg)
F_true_arr, F_hat_arr, F_inv_arr = [], [], []
for i in range(n):
    t = (i + 1) * dt
    x = x_lo + (x_hi - x_lo) * 0.5 * (1 - np.cos(2 * np.pi * 0.1 * t))
    r = p2.step(0.2, dt, x_cmd=x)
    state, F_hat, _ = observer.estimate_step(state, r.L_meas, r.P, ind, dyn, cfg, filt)
    F_inv = observer.nearest_preimage(r.L_meas, r.P, ind, env)
    F_true_arr.append(r.F); F_hat_arr.append(F_hat); F_inv_arr.append(F_inv)
F_true_arr = np.array(F_true_arr); F_hat_arr = np.array(F_hat_arr); F_inv_arr = np.array(F_inv_arr)
rng_F = F_true_arr.max() - F_true_arr.min()
err = np.abs(F_hat_arr - F_true_arr)
flips = np.abs(np.diff(F_inv_arr))
print(f"branch sweep: F range {rng_F:.2f} N; peak ~{model.peak_force(ind, 0.2):.2f}")
print(f"observer max err {err.max():.3f} N ({100*err.max()/rng_F:.1f}% of range)")
print(f"inverter max flip {flips.max():.3f} N ({100*flips.max()/rng_F:.1f}% of range), n flips>25%: {(flips > 0.25*rng_F).sum()}")
print(f"observer max step {np.abs(np.diff(F_hat_arr)).max():.4f} vs plant max dF {np.abs(np.diff(F_true_arr)).max():.4f}")
