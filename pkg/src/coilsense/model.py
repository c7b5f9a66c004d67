"""Control-oriented actuator model and the inductance self-sensing map.

Units are fixed across the package: pressure in MPa, inductance in uH,
force in N, length in m.  The force model is affine in length and
pressure.  The inductance map is a peaked curve in force whose five
coefficients are linear in pressure; with a negative exponential
coefficient the curve rises and then falls, so a single inductance
reading can have two force preimages (the ambiguity the observer
resolves).

All functions here are pure; parameter objects are immutable and safe
to share between threads.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "EnvelopeError",
    "DegenerateModelError",
    "DynamicParams",
    "InductanceParams",
    "OperatingEnvelope",
    "ModelCoeffs",
    "eval_dynamic_force",
    "invert_dynamic_length",
    "eval_coeffs",
    "eval_inductance",
    "d_inductance_dF",
    "peak_force",
    "load_dynamic_params",
    "save_dynamic_params",
    "load_inductance_params",
    "save_inductance_params",
]

# Stiffness magnitudes below this cannot be inverted meaningfully.
STIFFNESS_EPS = 1e-9


class DomainError(ValueError):
    """Argument outside the mathematical domain of the map (e.g. F < 0)."""


class EnvelopeError(ValueError):
    """Operating point or evaluated coefficients outside the valid envelope."""


class DegenerateModelError(ValueError):
    """Model parameters too close to singular to invert."""


@dataclass(frozen=True)
class DynamicParams:
    """Affine force model F = k*(x - x0) + c*P.

    k : stiffness, N/m
    x0 : unloaded (slack) length, m
    c : pressure coefficient, N/MPa
    """

    k: float
    x0: float
    c: float

    def __post_init__(self):
        vals = (self.k, self.x0, self.c)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"dynamic parameters must be finite, got {vals}")
        if self.k <= 0 or self.x0 <= 0 or self.c <= 0:
            raise ValueError(f"k, x0, c must all be positive, got {vals}")


@dataclass(frozen=True)
class InductanceParams:
    """Ten coefficients of the pressure-linear inductance map.

    Coefficient i of the map (i = 1..5) is ``p[2i-2]*P + p[2i-1]``, i.e.
    odd entries are pressure slopes and even entries are intercepts.
    """

    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != 10:
            raise ValueError(f"expected 10 coefficients, got {len(p)}")
        if not all(math.isfinite(v) for v in p):
            raise ValueError("all coefficients must be finite")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class OperatingEnvelope:
    """Physically feasible operating box for pressure, force, length, inductance."""

    P_min: float
    P_max: float
    F_min: float
    F_max: float
    x_min: float
    x_max: float
    L_min: float
    L_max: float

    def __post_init__(self):
        pairs = (
            ("P", self.P_min, self.P_max),
            ("F", self.F_min, self.F_max),
            ("x", self.x_min, self.x_max),
            ("L", self.L_min, self.L_max),
        )
        for name, lo, hi in pairs:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"envelope requires {name}_min < {name}_max, got [{lo}, {hi}]")
        if self.F_min < 0:
            raise ValueError("F_min must be >= 0")
        if self.P_min < 0:
            raise ValueError("P_min must be >= 0")

    @property
    def F_span(self) -> float:
        return self.F_max - self.F_min

    def check_P(self, P: float) -> None:
        if not (self.P_min <= P <= self.P_max):
            raise EnvelopeError(f"pressure {P} MPa outside [{self.P_min}, {self.P_max}]")

    def check_F(self, F: float) -> None:
        if not (self.F_min <= F <= self.F_max):
            raise EnvelopeError(f"force {F} N outside [{self.F_min}, {self.F_max}]")


@dataclass(frozen=True)
class ModelCoeffs:
    """The five pressure-evaluated coefficients of the inductance map."""

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float

    def as_tuple(self) -> tuple:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)


def eval_dynamic_force(params: DynamicParams, x, P):
    """Force of the affine model, F = k*(x - x0) + c*P.

    Accepts scalars or arrays (broadcast).  Total function: no clamping,
    no envelope checks.
    """
    return params.k * (x - params.x0) + params.c * P


def invert_dynamic_length(params: DynamicParams, F, P):
    """Length that produces force F at pressure P: x = x0 + (F - c*P)/k."""
    if abs(params.k) < STIFFNESS_EPS:
        raise DegenerateModelError(f"stiffness {params.k} below {STIFFNESS_EPS}, cannot invert")
    return params.x0 + (F - params.c * P) / params.k


def _coeff_arrays(params: InductanceParams, P):
    """The five coefficients as arrays broadcast against P."""
    P = np.asarray(P, dtype=float)
    p = params.p
    return tuple(p[2 * i] * P + p[2 * i + 1] for i in range(5))


def eval_coeffs(params: InductanceParams, P: float, validate: bool = True) -> ModelCoeffs:
    """Evaluate the five pressure-dependent coefficients at pressure P.

    Raises EnvelopeError when the resulting exponent coefficients
    (lambda2, lambda4) are not strictly positive, which would make the
    map undefined at F = 0; ``validate=False`` returns the raw
    arithmetic instead.
    """
    l1, l2, l3, l4, l5 = (float(v) for v in _coeff_arrays(params, float(P)))
    if validate:
        if not all(math.isfinite(v) for v in (l1, l2, l3, l4, l5)):
            raise EnvelopeError(f"non-finite coefficients at P={P}")
        if l2 <= 0 or l4 <= 0:
            raise EnvelopeError(f"lambda2={l2}, lambda4={l4} must be > 0 at P={P}")
    return ModelCoeffs(l1, l2, l3, l4, l5)


def eval_inductance(params: InductanceParams, F, P, validate: bool = True):
    """Inductance (uH) at force F (N) and pressure P (MPa).

    L = l1 * F**l2 * exp(l3 * F**l4) + l5 with the coefficients from
    ``eval_coeffs``.  F**l is the continuous extension with value 0 at
    F = 0 (valid because l2, l4 > 0 inside the envelope).  Scalars or
    arrays; arrays broadcast.

    With ``validate=False`` no domain or envelope checks run and
    non-finite values propagate silently (used inside fitting loops).
    """
    F_arr = np.asarray(F, dtype=float)
    scalar = F_arr.ndim == 0 and np.ndim(P) == 0
    if validate:
        if np.any(F_arr < 0):
            raise DomainError("force must be >= 0 for the inductance map")
        if np.ndim(P) == 0:
            eval_coeffs(params, float(P))  # raises on bad lambda2/lambda4
    l1, l2, l3, l4, l5 = _coeff_arrays(params, P)
    with np.errstate(all="ignore"):
        L = l1 * np.power(F_arr, l2) * np.exp(l3 * np.power(F_arr, l4)) + l5
    return float(L) if scalar else L


def d_inductance_dF(params: InductanceParams, F, P, validate: bool = True):
    """Analytic sensitivity dL/dF of the inductance map.

    dL/dF = l1 * F**(l2-1) * exp(l3 * F**l4) * (l2 + l3*l4*F**l4).
    Requires F > 0 (the power term may be singular at 0).
    """
    F_arr = np.asarray(F, dtype=float)
    scalar = F_arr.ndim == 0 and np.ndim(P) == 0
    if validate:
        if np.any(F_arr <= 0):
            raise DomainError("sensitivity requires F > 0")
        if np.ndim(P) == 0:
            eval_coeffs(params, float(P))
    l1, l2, l3, l4, _ = _coeff_arrays(params, P)
    with np.errstate(all="ignore"):
        Fl4 = np.power(F_arr, l4)
        g = l1 * np.power(F_arr, l2 - 1.0) * np.exp(l3 * Fl4) * (l2 + l3 * l4 * Fl4)
    return float(g) if scalar else g


def peak_force(params: InductanceParams, P: float) -> float:
    """Force at which dL/dF vanishes, (l2 / (-l3*l4))**(1/l4).

    Defined only for l3 < 0 (rising-then-falling curve); raises
    DomainError otherwise.
    """
    co = eval_coeffs(params, P)
    if co.lambda3 >= 0:
        raise DomainError(f"no interior peak: lambda3={co.lambda3} >= 0 at P={P}")
    return (co.lambda2 / (-co.lambda3 * co.lambda4)) ** (1.0 / co.lambda4)


# ---------------------------------------------------------------------------
# Parameter files (JSON, fixed field names)

def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dynamic_params(params: DynamicParams, path: str) -> None:
    _atomic_write_text(path, json.dumps({"k": params.k, "x0": params.x0, "c": params.c}, indent=2) + "\n")


def load_dynamic_params(path: str) -> DynamicParams:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return DynamicParams(k=float(doc["k"]), x0=float(doc["x0"]), c=float(doc["c"]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc} in dynamic parameter file") from None


def save_inductance_params(params: InductanceParams, path: str) -> None:
    _atomic_write_text(path, json.dumps({"p": list(params.p)}, indent=2) + "\n")


def load_inductance_params(path: str) -> InductanceParams:
    with open(path) as fh:
        doc = json.load(fh)
    if "p" not in doc:
        raise ValueError(f"{path}: missing field 'p' in inductance parameter file")
    return InductanceParams(p=tuple(doc["p"]))
