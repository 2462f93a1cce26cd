"""Model functions, constants, and admissibility checks.

The model is parametrized by a handful of scalar constants and five scalar
functions (two reaction terms ``g``/``g_gamma`` with nonnegative primitives,
a convex mobility weight ``alpha``, and two positive time-scale weights
``alpha0``/``alpha_gamma0``).  Functions are selected by string tags with
coefficient arrays so configs stay declarative; the library never accepts
user-supplied symbolic expressions.

Also houses the smooth relaxation ``f_delta`` of the Euclidean norm and the
step-size bound ``tau_star``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidParameterError
from .mesh import MeshSpec

# Sampling grid used by all assumption checks.  Inequalities over all of R
# cannot be verified; checks are by construction sample-based on [-2, 3].
SAMPLE_GRID = np.linspace(-2.0, 3.0, 1001)

_KINDS = ("constant", "linear", "quadratic")


@dataclass(frozen=True)
class FunctionSpec:
    """A scalar model function chosen by tag.

    kinds:
      constant  coef=[c]        f(s) = c
      linear    coef=[a, b]     f(s) = a*s + b
      quadratic coef=[c0, c2]   f(s) = c0 + (c2/2)*s**2
    """

    kind: str
    coef: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameterError(f"unknown function kind {self.kind!r}")
        n = {"constant": 1, "linear": 2, "quadratic": 2}[self.kind]
        if len(self.coef) != n:
            raise InvalidParameterError(
                f"kind {self.kind!r} takes {n} coefficients, got {len(self.coef)}"
            )
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full_like(s, self.coef[0])
        if self.kind == "linear":
            a, b = self.coef
            return a * s + b
        c0, c2 = self.coef
        return c0 + 0.5 * c2 * s * s

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(s)
        if self.kind == "linear":
            return np.full_like(s, self.coef[0])
        return self.coef[1] * s

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "quadratic":
            return np.full_like(s, self.coef[1])
        return np.zeros_like(s)

    def primitive(self, s):
        """An antiderivative, with the additive constant chosen so that the
        result is nonnegative whenever such a primitive exists (linear with
        positive slope, or the zero function)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return self.coef[0] * s
        if self.kind == "linear":
            a, b = self.coef
            if a > 0.0:
                return (a * s + b) ** 2 / (2.0 * a)
            return 0.5 * a * s * s + b * s
        c0, c2 = self.coef
        return c0 * s + c2 * s ** 3 / 6.0

    def as_dict(self):
        return {"kind": self.kind, "coef": list(self.coef)}

    @staticmethod
    def from_dict(d) -> "FunctionSpec":
        return FunctionSpec(kind=d["kind"], coef=tuple(d["coef"]))


def eval_f_delta(delta, omega):
    """Smooth relaxation of the Euclidean norm: sqrt(delta^2 + |w|^2) - delta.

    ``omega`` is a scalar, a d-vector, or an array of either (vectors on the
    last axis).  Satisfies |w| - delta <= f_delta(w) <= |w|.
    """
    if delta <= 0.0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    omega = np.asarray(omega, dtype=float)
    sq = omega * omega if omega.ndim == 0 else np.sum(omega * omega, axis=-1)
    return np.sqrt(delta * delta + sq) - delta


def eval_grad_f_delta(delta, omega):
    """Gradient w / sqrt(delta^2 + |w|^2); maps into the open unit ball."""
    if delta <= 0.0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    omega = np.asarray(omega, dtype=float)
    sq = omega * omega if omega.ndim == 0 else np.sum(omega * omega, axis=-1)
    denom = np.sqrt(delta * delta + sq)
    if omega.ndim == 0:
        return omega / denom
    return omega / denom[..., None]


def f_delta_scalar(delta, omega):
    """Elementwise form of ``eval_f_delta`` for arrays of scalar gradients
    (one directional derivative per mesh edge)."""
    if delta <= 0.0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    omega = np.asarray(omega, dtype=float)
    return np.sqrt(delta * delta + omega * omega) - delta


def grad_f_delta_scalar(delta, omega):
    """Elementwise form of ``eval_grad_f_delta`` for scalar gradients."""
    if delta <= 0.0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    omega = np.asarray(omega, dtype=float)
    return omega / np.sqrt(delta * delta + omega * omega)


def tau_star(lip_g, lip_g_gamma):
    """Admissible step-size bound 1 / (2 (1 + Lip(g) + Lip(g_gamma)))."""
    if lip_g < 0.0 or lip_g_gamma < 0.0:
        raise InvalidParameterError("Lipschitz constants must be nonnegative")
    return 1.0 / (2.0 * (1.0 + lip_g + lip_g_gamma))


def estimate_lipschitz(fn: FunctionSpec, grid=SAMPLE_GRID) -> float:
    """Max sampled difference quotient on the grid, rounded to absorb the
    last-bit float noise of the quotients (the guard tau < tau_star must be
    exact for exactly representable Lipschitz constants)."""
    vals = fn(grid)
    quot = np.abs(np.diff(vals) / np.diff(grid))
    return float(np.round(np.max(quot), 12))


@dataclass(frozen=True)
class CheckResult:
    label: str
    description: str
    passed: bool
    witness: Optional[float] = None

    def __str__(self):
        mark = "ok" if self.passed else "FAIL"
        w = "" if self.witness is None else f" (witness {self.witness:.6g})"
        return f"[{mark}] {self.label}: {self.description}{'' if self.passed else w}"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    lip_g: float
    lip_g_gamma: float
    tau_star: float
    delta_alpha: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = [str(c) for c in self.checks]
        lines.append(
            f"lip_g={self.lip_g:.6g} lip_g_gamma={self.lip_g_gamma:.6g} "
            f"tau_star={self.tau_star:.6g} delta_alpha={self.delta_alpha:.6g}"
        )
        return "\n".join(lines)


@dataclass(frozen=True)
class ModelParams:
    """All constants and model functions, plus the grid specification."""

    kappa: float
    kappa_gamma: float
    epsilon: float
    delta: float
    tau: float
    r0: float
    r1: float
    g_spec: FunctionSpec
    g_gamma_spec: FunctionSpec
    alpha_spec: FunctionSpec
    alpha0_spec: FunctionSpec
    alpha_gamma0_spec: FunctionSpec
    grid: MeshSpec = field(default_factory=lambda: MeshSpec("periodic_strip", 64, 32))

    def __post_init__(self):
        if self.kappa <= 0.0:
            raise InvalidParameterError("kappa must be positive")
        if self.kappa_gamma <= 0.0:
            raise InvalidParameterError("kappa_gamma must be positive")
        if self.epsilon < 0.0:
            raise InvalidParameterError("epsilon must be nonnegative")
        if self.delta <= 0.0:
            raise InvalidParameterError("delta must be positive")
        if self.tau <= 0.0:
            raise InvalidParameterError("tau must be positive")
        if self.r0 > self.r1:
            raise InvalidParameterError("r0 must not exceed r1")

    # Model function shorthands; all vectorized over numpy arrays.
    def g(self, s):
        return self.g_spec(s)

    def g_hat(self, s):
        return self.g_spec.primitive(s)

    def g_gamma(self, s):
        return self.g_gamma_spec(s)

    def g_gamma_hat(self, s):
        return self.g_gamma_spec.primitive(s)

    def alpha(self, s):
        return self.alpha_spec(s)

    def dalpha(self, s):
        return self.alpha_spec.d1(s)

    def ddalpha(self, s):
        return self.alpha_spec.d2(s)

    def alpha0(self, s):
        return self.alpha0_spec(s)

    def alpha_gamma0(self, s):
        return self.alpha_gamma0_spec(s)

    def tau_star(self) -> float:
        return tau_star(
            estimate_lipschitz(self.g_spec), estimate_lipschitz(self.g_gamma_spec)
        )

    def replace(self, **kw) -> "ModelParams":
        from dataclasses import replace as _replace

        return _replace(self, **kw)

    def as_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "kappa_gamma": self.kappa_gamma,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "tau": self.tau,
            "r0": self.r0,
            "r1": self.r1,
            "g": self.g_spec.as_dict(),
            "g_gamma": self.g_gamma_spec.as_dict(),
            "alpha": self.alpha_spec.as_dict(),
            "alpha0": self.alpha0_spec.as_dict(),
            "alpha_gamma0": self.alpha_gamma0_spec.as_dict(),
            "grid": self.grid.as_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelParams":
        return ModelParams(
            kappa=float(d["kappa"]),
            kappa_gamma=float(d["kappa_gamma"]),
            epsilon=float(d["epsilon"]),
            delta=float(d["delta"]),
            tau=float(d["tau"]),
            r0=float(d["r0"]),
            r1=float(d["r1"]),
            g_spec=FunctionSpec.from_dict(d["g"]),
            g_gamma_spec=FunctionSpec.from_dict(d["g_gamma"]),
            alpha_spec=FunctionSpec.from_dict(d["alpha"]),
            alpha0_spec=FunctionSpec.from_dict(d["alpha0"]),
            alpha_gamma0_spec=FunctionSpec.from_dict(d["alpha_gamma0"]),
            grid=MeshSpec.from_dict(d["grid"]),
        )

    @staticmethod
    def default(grid: Optional[MeshSpec] = None, **overrides) -> "ModelParams":
        """Desk-scale default: g(s)=g_gamma(s)=s-1, alpha(s)=0.1+s^2/2,
        alpha0 = alpha_gamma0 = 1, on a 64x32 periodic strip."""
        kw = dict(
            kappa=0.05,
            kappa_gamma=0.05,
            epsilon=1.0,
            delta=0.05,
            tau=0.01,
            r0=0.0,
            r1=1.0,
            g_spec=FunctionSpec("linear", (1.0, -1.0)),
            g_gamma_spec=FunctionSpec("linear", (1.0, -1.0)),
            alpha_spec=FunctionSpec("quadratic", (0.1, 1.0)),
            alpha0_spec=FunctionSpec("constant", (1.0,)),
            alpha_gamma0_spec=FunctionSpec("constant", (1.0,)),
            grid=grid if grid is not None else MeshSpec("periodic_strip", 64, 32),
        )
        kw.update(overrides)
        return ModelParams(**kw)


def validate_assumptions(params: ModelParams, grid=SAMPLE_GRID) -> ValidationReport:
    """Sample-based check of the standing assumptions on the model functions.

    Returns a report rather than raising: callers decide whether a failing
    assumption is fatal.  Also estimates the Lipschitz constants of g and
    g_gamma, which feed the step-size bound.
    """
    checks = []
    tol = 1e-12

    def add(label, description, passed, witness=None):
        checks.append(CheckResult(label, description, bool(passed), witness))

    g0, g1 = float(params.g(0.0)), float(params.g(1.0))
    add("A1", "g(0) <= 0", g0 <= tol, g0)
    add("A1", "g(1) >= 0", g1 >= -tol, g1)
    gg0, gg1 = float(params.g_gamma(0.0)), float(params.g_gamma(1.0))
    add("A1", "g_gamma(0) <= 0", gg0 <= tol, gg0)
    add("A1", "g_gamma(1) >= 0", gg1 >= -tol, gg1)

    ghat = params.g_hat(grid)
    i = int(np.argmin(ghat))
    add("A1", "primitive of g nonnegative on samples", ghat[i] >= -tol, float(grid[i]))
    gghat = params.g_gamma_hat(grid)
    i = int(np.argmin(gghat))
    add("A1", "primitive of g_gamma nonnegative on samples", gghat[i] >= -tol, float(grid[i]))

    a0 = params.alpha0(grid)
    i = int(np.argmin(a0))
    add("A2", "alpha0 > 0 on samples", a0[i] > 0.0, float(grid[i]))
    ag0 = params.alpha_gamma0(grid)
    i = int(np.argmin(ag0))
    add("A2", "alpha_gamma0 > 0 on samples", ag0[i] > 0.0, float(grid[i]))

    dalpha0 = float(params.dalpha(0.0))
    add("A3", "alpha'(0) = 0", abs(dalpha0) <= tol, 0.0)
    dda = params.ddalpha(grid)
    i = int(np.argmin(dda))
    add("A3", "alpha'' >= 0 on samples", dda[i] >= -tol, float(grid[i]))
    a = params.alpha(grid)
    i = int(np.argmin(a))
    add("A3", "alpha > 0 on samples", a[i] > 0.0, float(grid[i]))

    delta_alpha = float(min(np.min(a), np.min(a0), np.min(ag0)))
    add("A4", "delta_alpha > 0", delta_alpha > 0.0, delta_alpha)

    add("A5", "r0 <= r1", params.r0 <= params.r1, params.r1 - params.r0)

    lip_g = estimate_lipschitz(params.g_spec, grid)
    lip_gg = estimate_lipschitz(params.g_gamma_spec, grid)
    ts = tau_star(lip_g, lip_gg)
    add("tau", f"tau < tau_star = {ts:.6g}", params.tau < ts, params.tau)

    return ValidationReport(
        checks=tuple(checks),
        lip_g=lip_g,
        lip_g_gamma=lip_gg,
        tau_star=ts,
        delta_alpha=delta_alpha,
    )
