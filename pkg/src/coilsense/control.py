"""PID-plus-feedforward pressure control and the three-way comparison
harness (open-loop, external-sensor feedback, self-sensing feedback).

The feedforward inverts the identified affine model; PID corrects the
rest (backward-difference derivative on the error, rectangular
integration, integral clamped in MPa for anti-windup).  All modes of a
comparison group share one plant seed and reference, so their noise
streams are identical and the comparison is paired.

Since pressurizing the actuator raises force and shortens it, the
force loop acts on (ref - measurement) while the displacement loop
acts on (measurement - ref).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from . import observer as obs
from . import signal as sig
from .ident import GoodnessMetrics, fit_dynamic, goodness
from .model import DegenerateModelError, DynamicParams, InductanceParams
from .plant import (Plant, PlantConfig, Scenario, perturbation_load_profile,
                    run_scenario)

__all__ = [
    "PidGains",
    "ControllerState",
    "TrackingSetup",
    "TrackingResult",
    "MODES",
    "pid_step",
    "feedforward_pressure",
    "identify_dynamic",
    "resolve_setup",
    "run_tracking",
    "compare_tracking",
    "run_perturbation",
]

MODES = ("open_loop", "sensor_fb", "self_sensing")

_C_EPS = 1e-9


@dataclass(frozen=True)
class PidGains:
    """Discrete PID gains mapping loop error to MPa.

    Defaults are the hardware-tuned values reported for the bench
    controller at 20 Hz; simulated plants generally need retuning
    (see TrackingSetup).
    """

    kp: float = 0.027
    ki: float = 0.001
    kd: float = 0.003
    rate_hz: float = 20.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise ValueError("gains must be >= 0")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz


@dataclass
class ControllerState:
    """Integral accumulator (already in MPa, clamped) and previous error."""

    integral: float = 0.0
    prev_error: float = 0.0
    clamp: tuple = (-0.3, 0.3)


def pid_step(state: ControllerState, error: float, gains: PidGains) -> float:
    """One positional PID update; returns the feedback pressure delta (MPa).

    Rectangular integration with the integral term clamped to
    ``state.clamp`` (anti-windup); backward-difference derivative on
    the error.
    """
    dt = gains.dt
    state.integral = float(np.clip(state.integral + gains.ki * error * dt, *state.clamp))
    derivative = (error - state.prev_error) / dt
    state.prev_error = error
    return gains.kp * error + state.integral + gains.kd * derivative


def feedforward_pressure(dyn: DynamicParams, F_ref: float | None = None,
                         x: float | None = None, x_ref: float | None = None,
                         F_load: float | None = None,
                         p_max: float = 0.65) -> tuple:
    """Model-inverting pressure command, clamped to [0, p_max].

    Force mode (``F_ref`` at fixed ``x``): P = (F_ref - k(x - x0)) / c.
    Displacement mode (``x_ref`` at fixed ``F_load``):
    P = (F_load - k(x_ref - x0)) / c.  Returns ``(pressure, saturated)``.
    """
    if abs(dyn.c) < _C_EPS:
        raise DegenerateModelError(f"pressure coefficient {dyn.c} too small to invert")
    force_mode = F_ref is not None
    disp_mode = x_ref is not None
    if force_mode == disp_mode:
        raise ValueError("give either (F_ref, x) or (x_ref, F_load)")
    if force_mode:
        if x is None:
            raise ValueError("force mode needs the held length x")
        p = (F_ref - dyn.k * (x - dyn.x0)) / dyn.c
    else:
        if F_load is None:
            raise ValueError("displacement mode needs the external load")
        p = (F_load - dyn.k * (x_ref - dyn.x0)) / dyn.c
    clipped = float(np.clip(p, 0.0, p_max))
    return clipped, clipped != p


def identify_dynamic(plant_cfg: PlantConfig, seed_tag: int = 501) -> DynamicParams:
    """Identify the affine model from a seeded calibration sweep of the plant.

    This is the model a bench campaign would produce: its stiffness
    absorbs the quasi-static part of the hysteresis, which matters for
    both feedforward quality and displacement inference.
    """
    scn = Scenario.isobaric_sweep(x0=plant_cfg.dyn.x0, cycles=1, cycle_period_s=4.0)
    ds = run_scenario(scn, replace(plant_cfg, seed=plant_cfg.seed + seed_tag))
    return fit_dynamic(ds).params


@dataclass
class TrackingSetup:
    """Everything a tracking or perturbation run needs besides the scenario.

    ``dyn``/``ind`` are the nominal models used by feedforward and the
    observer; ``dyn=None`` triggers one identification sweep (cached by
    ``resolve_setup``), ``ind=None`` uses the plant's own map (a
    bench-calibrated sensor model).  ``load_nominal`` is what the
    feedforward believes the external load to be in displacement mode
    (the true load is the scenario's); ``sensor_noise_x`` is the
    external displacement sensor's noise used by the sensor-feedback
    mode.
    """

    plant_cfg: PlantConfig
    dyn: DynamicParams | None = None
    ind: InductanceParams | None = None
    gains_force: PidGains = field(default_factory=lambda: PidGains(kp=0.30, ki=1.2, kd=0.05))
    gains_disp: PidGains = field(default_factory=lambda: PidGains(kp=40.0, ki=250.0, kd=1.0))
    p_max: float = 0.65
    integral_clamp_mpa: float = 0.3
    load_nominal: float | None = None
    load_nominal_scale: float = 1.0
    sensor_noise_x: float = 3e-4
    filter_spec: sig.FilterSpec | None = None
    observer_overrides: dict = field(default_factory=dict)
    preroll_s: float = 3.0
    condition_cycles: float = 1.0
    metrics_skip_periods: float = 1.0


def resolve_setup(setup: TrackingSetup) -> TrackingSetup:
    """Fill the derived fields of a setup (identified model, filter spec)."""
    out = replace(setup)
    if out.dyn is None:
        out.dyn = identify_dynamic(out.plant_cfg)
    if out.ind is None:
        out.ind = out.plant_cfg.ind
    if out.filter_spec is None:
        out.filter_spec = sig.FilterSpec(order=3, cutoff_hz=10.0,
                                         sample_rate_hz=out.plant_cfg.sensor_rate_hz)
    return out


@dataclass
class TrackingResult:
    """Time series and metrics of one closed- or open-loop run.

    ``metrics`` compares plant truth against the reference over the
    metrics window; ``estimation`` (when present) summarizes the
    observer error against truth.  ``improvement_pct`` is filled by
    ``compare_tracking`` relative to the group's open-loop run.
    """

    scenario: str
    mode: str
    t: np.ndarray
    reference: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    command: np.ndarray
    metrics: GoodnessMetrics
    improvement_pct: float | None = None
    estimation: dict | None = None
    meta: dict = field(default_factory=dict)


def _observer_bundle(setup: TrackingSetup):
    cfg = obs.make_observer_config(
        setup.ind, setup.plant_cfg.envelope,
        dt=1.0 / setup.plant_cfg.sensor_rate_hz,
        noise_L=setup.plant_cfg.noise_L,
        **setup.observer_overrides)
    return cfg


def _start_observer(ocfg, setup, first_L: float, first_P: float,
                    F0: float | None = None):
    """Prime the filter and seed the state.

    ``F0`` is the operating force the experimenter knows at start
    (reference start or hanging load); without it the nearest preimage
    of the first reading is used, which on a peaked curve can pick the
    wrong branch.
    """
    filt = sig.design(setup.filter_spec)
    sig.prime(filt, first_L)
    if F0 is None:
        F0 = obs.nearest_preimage(first_L, first_P, setup.ind, ocfg.envelope)
    state = obs.reset(float(np.clip(F0, ocfg.envelope.F_min, ocfg.envelope.F_max)), ocfg)
    return filt, state


def run_tracking(scenario: Scenario, mode: str, setup: TrackingSetup) -> TrackingResult:
    """Run one tracking scenario in one mode.

    The pre-roll (ramp to the operating point, plus conditioning cycles
    in displacement mode) is excluded from the logs; metrics skip the
    first ``metrics_skip_periods`` of the reference on top of that.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}' (known: {MODES})")
    if scenario.kind not in ("force_tracking", "displacement_tracking"):
        raise ValueError(f"run_tracking needs a tracking scenario, got '{scenario.kind}'")
    setup = resolve_setup(setup)
    pcfg = setup.plant_cfg
    force_mode = scenario.kind == "force_tracking"
    dts = 1.0 / pcfg.sensor_rate_hz
    sub = pcfg.decimation_factor
    gains = setup.gains_force if force_mode else setup.gains_disp
    if abs(gains.rate_hz - pcfg.control_rate_hz) > 1e-9:
        raise ValueError("PID rate must match the plant's control rate")
    ocfg = _observer_bundle(setup)
    ctrl = ControllerState(clamp=(-setup.integral_clamp_mpa, setup.integral_clamp_mpa))
    rng_x = np.random.default_rng([pcfg.seed, 77])  # external displacement sensor

    if force_mode:
        hold_x = scenario.hold_x
        p_ff0, _ = feedforward_pressure(setup.dyn, F_ref=float(scenario.reference(0.0)),
                                        x=hold_x, p_max=setup.p_max)
        load_true = None
    else:
        load_true = scenario.load
        load_ff = (setup.load_nominal if setup.load_nominal is not None
                   else setup.load_nominal_scale * load_true)
        p_ff0, _ = feedforward_pressure(setup.dyn, x_ref=float(scenario.reference(0.0)),
                                        F_load=load_ff, p_max=setup.p_max)

    plant = Plant(pcfg, x0=pcfg.dyn.x0, P0=p_ff0)

    # Pre-roll: reach the operating point with the feedforward pressure
    # applied, so the valve and the observer are settled at t = 0.
    n_pre = int(round(setup.preroll_s / dts))
    ramp_n = max(1, int(round(2.0 / dts)))
    filt = state = None
    last = None
    for i in range(n_pre):
        if force_mode:
            frac = min(1.0, (i + 1) / ramp_n)
            x_cmd = pcfg.dyn.x0 + frac * (hold_x - pcfg.dyn.x0)
            last = plant.step(p_ff0, dts, x_cmd=x_cmd)
        else:
            last = plant.step(p_ff0, dts, F_load=load_true)
        if filt is None:
            F0 = float(scenario.reference(0.0)) if force_mode else load_true
            filt, state = _start_observer(ocfg, setup, last.L_meas, last.P, F0=F0)
        state, F_hat, x_hat = obs.estimate_step(state, last.L_meas, last.P,
                                                setup.ind, setup.dyn, ocfg, filt)
    if not force_mode and setup.condition_cycles > 0:
        # exercise the loop region before measuring (standard practice)
        n_cond = int(round(setup.condition_cycles / scenario.frequency_hz / dts))
        for i in range(n_cond):
            t = (i + 1) * dts - setup.condition_cycles / scenario.frequency_hz
            ref_now = float(scenario.reference(t))
            p_ff, _ = feedforward_pressure(setup.dyn, x_ref=ref_now, F_load=load_ff,
                                           p_max=setup.p_max)
            last = plant.step(p_ff, dts, F_load=load_true)
            state, F_hat, x_hat = obs.estimate_step(state, last.L_meas, last.P,
                                                    setup.ind, setup.dyn, ocfg, filt)

    n = int(round(scenario.duration_s / dts))
    t_log = np.empty(n)
    ref_log = np.empty(n)
    truth_log = np.empty(n)
    est_log = np.empty(n)
    cmd_log = np.empty(n)
    F_hat = state.F_hat
    x_hat = model.invert_dynamic_length(setup.dyn, F_hat, last.P)
    p_cmd = p_ff0
    for i in range(n):
        t = i * dts
        if i % sub == 0:
            ref_now = float(scenario.reference(t))
            if force_mode:
                p_ff, _ = feedforward_pressure(setup.dyn, F_ref=ref_now, x=hold_x,
                                               p_max=setup.p_max)
                if mode == "sensor_fb":
                    err = ref_now - last.F_meas
                elif mode == "self_sensing":
                    err = ref_now - F_hat
            else:
                p_ff, _ = feedforward_pressure(setup.dyn, x_ref=ref_now, F_load=load_ff,
                                               p_max=setup.p_max)
                if mode == "sensor_fb":
                    x_meas = last.x + setup.sensor_noise_x * rng_x.standard_normal()
                    err = x_meas - ref_now
                elif mode == "self_sensing":
                    err = x_hat - ref_now
            dp = pid_step(ctrl, err, gains) if mode != "open_loop" else 0.0
            p_cmd = float(np.clip(p_ff + dp, 0.0, setup.p_max))
        if force_mode:
            last = plant.step(p_cmd, dts, x_cmd=hold_x)
        else:
            last = plant.step(p_cmd, dts, F_load=load_true)
        state, F_hat, x_hat = obs.estimate_step(state, last.L_meas, last.P,
                                                setup.ind, setup.dyn, ocfg, filt)
        t_log[i] = t
        ref_log[i] = float(scenario.reference(t))
        truth_log[i] = last.F if force_mode else last.x
        est_log[i] = F_hat if force_mode else x_hat
        cmd_log[i] = p_cmd

    skip = setup.metrics_skip_periods / scenario.frequency_hz
    win = t_log >= min(skip, 0.5 * scenario.duration_s)
    metrics = goodness(truth_log[win], ref_log[win])
    err_est = est_log[win] - truth_log[win]
    estimation = {
        "max_abs_error": float(np.max(np.abs(err_est))),
        "rmse": float(np.sqrt(np.mean(err_est ** 2))),
    }
    return TrackingResult(
        scenario=scenario.name, mode=mode, t=t_log, reference=ref_log,
        truth=truth_log, estimate=est_log, command=cmd_log, metrics=metrics,
        estimation=estimation,
        meta={"seed": pcfg.seed, "kind": scenario.kind,
              "metrics_window_start_s": float(min(skip, 0.5 * scenario.duration_s))},
    )


def compare_tracking(scenario: Scenario, setup: TrackingSetup,
                     modes: tuple = MODES) -> dict:
    """Run the mode group on identical seeds and fill improvements
    relative to the open-loop baseline (100 * (1 - rmse/rmse_open))."""
    setup = resolve_setup(setup)
    results = {mode: run_tracking(scenario, mode, setup) for mode in modes}
    base = results.get("open_loop")
    if base is not None:
        for mode, res in results.items():
            if mode != "open_loop" and base.metrics.rmse > 0:
                res.improvement_pct = 100.0 * (1.0 - res.metrics.rmse / base.metrics.rmse)
    return results


def run_perturbation(setup: TrackingSetup, scenario: Scenario | None = None) -> TrackingResult:
    """Hold a constant length by self-sensing feedback while seeded load
    steps come and go; report the force-estimation error statistics.

    ``estimation`` carries max |F_hat - F|, its RMSE, and the drift
    (mean error over the final 20% of the run, which is kept free of
    load events).
    """
    if scenario is None:
        scenario = Scenario.load_perturbation()
    if scenario.kind != "load_perturbation":
        raise ValueError(f"run_perturbation needs a load_perturbation scenario, got '{scenario.kind}'")
    setup = resolve_setup(setup)
    pcfg = setup.plant_cfg
    dts = 1.0 / pcfg.sensor_rate_hz
    sub = pcfg.decimation_factor
    gains = setup.gains_disp
    ocfg = _observer_bundle(setup)
    ctrl = ControllerState(clamp=(-setup.integral_clamp_mpa, setup.integral_clamp_mpa))
    _, load_at = perturbation_load_profile(scenario, pcfg.seed)
    x_ref = scenario.hold_x
    base_load = scenario.load
    p_ff, _ = feedforward_pressure(setup.dyn, x_ref=x_ref, F_load=base_load,
                                   p_max=setup.p_max)
    plant = Plant(pcfg, x0=x_ref, P0=p_ff)
    filt = state = None
    last = None
    for i in range(int(round(setup.preroll_s / dts))):
        last = plant.step(p_ff, dts, F_load=load_at(0.0))
        if filt is None:
            filt, state = _start_observer(ocfg, setup, last.L_meas, last.P, F0=base_load)
        state, F_hat, x_hat = obs.estimate_step(state, last.L_meas, last.P,
                                                setup.ind, setup.dyn, ocfg, filt)

    n = int(round(scenario.duration_s / dts))
    t_log = np.empty(n)
    truth_log = np.empty(n)
    est_log = np.empty(n)
    cmd_log = np.empty(n)
    x_log = np.empty(n)
    p_cmd = p_ff
    x_hat = model.invert_dynamic_length(setup.dyn, state.F_hat, last.P)
    for i in range(n):
        t = i * dts
        if i % sub == 0:
            dp = pid_step(ctrl, x_hat - x_ref, gains)
            p_cmd = float(np.clip(p_ff + dp, 0.0, setup.p_max))
        last = plant.step(p_cmd, dts, F_load=load_at(t))
        state, F_hat, x_hat = obs.estimate_step(state, last.L_meas, last.P,
                                                setup.ind, setup.dyn, ocfg, filt)
        t_log[i] = t
        truth_log[i] = last.F
        est_log[i] = F_hat
        cmd_log[i] = p_cmd
        x_log[i] = last.x

    err = est_log - truth_log
    tail = slice(int(0.8 * n), None)
    estimation = {
        "max_abs_error": float(np.max(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "drift": float(np.mean(err[tail])),
    }
    # the headline comparison here is self-sensed force against truth
    # (the regulated length is constant; its RMSE goes to meta)
    metrics = goodness(est_log, truth_log)
    return TrackingResult(
        scenario=scenario.name, mode="self_sensing", t=t_log,
        reference=np.full(n, x_ref), truth=truth_log, estimate=est_log, command=cmd_log,
        metrics=metrics, estimation=estimation,
        meta={"seed": pcfg.seed, "kind": scenario.kind,
              "x_rmse": float(np.sqrt(np.mean((x_log - x_ref) ** 2)))},
    )
