"""Scratch: validate reference parameter choices and TRF recovery (not shipped)."""
import time
import numpy as np
from coilsense import model, ident
from coilsense.model import InductanceParams, DynamicParams

REF_P = (0.05, 0.6, 0.2, 1.3, -0.15, -0.55, 0.3, 1.0, 0.45, 4.75)
ind = InductanceParams(REF_P)
dyn = DynamicParams(38.6, 0.100, 1.6310)

# --- curve family properties over the envelope
Ps = np.linspace(0, 0.65, 14)
Fs = np.linspace(0, 5, 400)
print("== reference curve family ==")
peaks = [model.peak_force(ind, P) for P in Ps]
print("peak F range:", min(peaks), max(peaks))
L0s = [model.eval_inductance(ind, 0.0, P) for P in Ps]
print("L(F=0) range:", min(L0s), max(L0s))
Lmax = max(model.eval_inductance(ind, Fs, P).max() for P in Ps)
Lmin = min(model.eval_inductance(ind, Fs, P).min() for P in Ps)
print("L overall range:", Lmin, Lmax)
# ordering in P
curves = np.array([model.eval_inductance(ind, Fs, P) for P in Ps])
dord = np.diff(curves, axis=0)
print("min over grid of dL/dP-ordering (want >0):", dord.min())
# coefficient signs
for P in (0.0, 0.65):
    co = model.eval_coeffs(ind, P)
    print(f"P={P}: lambdas={co.as_tuple()}")
# gradient medians
FF, PP = np.meshgrid(np.linspace(0.05, 5, 60), Ps)
G = np.abs(model.d_inductance_dF(ind, FF, PP))
print("median |dL/dF|:", np.median(G), " max:", G.max())

# gradient near the 20x20 grid used by AC1
Fg = np.linspace(0.01, 5, 20)
Pg = np.linspace(0, 0.65, 20)
mind = min(np.min(np.abs(Fg - model.peak_force(ind, P))) for P in Pg)
print("AC1 grid min distance to any peak:", mind)

# --- AC1-style FD check
h = np.maximum(1e-6, 1e-6 * Fg)
worst = 0.0
for P in Pg:
    a = model.d_inductance_dF(ind, Fg, P)
    fd = (model.eval_inductance(ind, Fg + h, P) - model.eval_inductance(ind, np.maximum(Fg - h, 0), P)) / (2 * h)
    rel = np.abs(a - fd) / np.maximum(np.abs(a), 1e-300)
    worst = max(worst, rel.max())
print("AC1 worst relative FD mismatch:", worst)

# --- TRF exact recovery (AC2 style)
print("\n== TRF exact recovery ==")
rng = np.random.default_rng(7)
Fd = np.tile(np.linspace(0, 4.5, 45), 8)
Pd = np.repeat(np.linspace(0, 0.65, 8), 45)
Ld = model.eval_inductance(ind, Fd, Pd)
t = np.arange(Fd.size) * 0.01
ds = ident.Dataset(t=t, P=Pd, L=Ld, F=Fd)
t0 = time.time()
fails = 0
for trial in range(5):
    pert = np.array(REF_P) * (1 + rng.uniform(-0.2, 0.2, 10))
    init = InductanceParams(tuple(np.clip(pert, *ident.default_inductance_bounds())))
    rep = ident.fit_inductance(ds, init, seed=trial)
    print(f"trial {trial}: rmse={rep.rmse:.3e} iters={rep.iterations} conv={rep.converged}")
    if rep.rmse > 1e-8:
        fails += 1
print(f"elapsed {time.time()-t0:.1f}s; fails={fails}")
