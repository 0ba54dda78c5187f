"""Coefficient functions, energy and dissipation functionals.

A problem instance is a :class:`ModelCoefficients` bundle of scalar
functions (vectorised over numpy arrays) together with their derivatives.
The two built-in presets share the parametric family

* ``c(phi) = c0 * phi * (1 - phi)``, ``b = c**2 + eps``
* ``f(phi) = f0 * (phi - w0)**2 * (phi - w1)**2``
* ``kappa(phi) = k0 / (10 phi**2 + 1e-4)``
* ``A(phi) = a0 * (1 + tanh(s * (cot(pi phi*) - cot(pi phi))))``

with ``phi`` clamped to ``[delta, 1 - delta]`` inside the cotangent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .fem import FEFunction, FESpace

Fn = Callable[[np.ndarray], np.ndarray]

TANH_SATURATION = 40.0


@dataclass(frozen=True)
class ModelCoefficients:
    gamma: float
    epsilon: float
    d0: float
    b: Fn
    db: Fn
    c: Fn
    dc: Fn
    A: Fn
    dA: Fn
    d2A: Fn
    kappa: Fn
    dkappa: Fn
    f: Fn
    df: Fn
    d2f: Fn
    f1: float = float("nan")
    alpha: float = float("nan")
    clamp_delta: float = 1e-6
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def with_auto_alpha(self, bracket=(-10.0, 11.0)) -> ModelCoefficients:
        f1 = lower_bound_f1(self, bracket)
        return replace(self, f1=f1, alpha=max(f1, 0.0) + 1.0)


def _const(value: float) -> Fn:
    return lambda s: np.full_like(np.asarray(s, dtype=float), value)


def polynomial_family(*, gamma, epsilon, d0=1.0, c0, f0, wells=(0.05, 0.95), k0,
                      a0, steepness, phi_star, clamp_delta=1e-6,
                      name="custom") -> ModelCoefficients:
    """Build coefficients of the family shared by both presets."""
    w0, w1 = wells
    wsum = w0 + w1

    def c(s):
        return c0 * s * (1.0 - s)

    def dc(s):
        return c0 * (1.0 - 2.0 * s)

    def b(s):
        return c(s) ** 2 + epsilon

    def db(s):
        return 2.0 * c(s) * dc(s)

    def f(s):
        return f0 * (s - w0) ** 2 * (s - w1) ** 2

    def df(s):
        return 2.0 * f0 * (s - w0) * (s - w1) * (2.0 * s - wsum)

    def d2f(s):
        return 2.0 * f0 * ((s - w1) * (2.0 * s - wsum) + (s - w0) * (2.0 * s - wsum)
                           + 2.0 * (s - w0) * (s - w1))

    def kappa(s):
        return k0 / (10.0 * s * s + 1e-4)

    def dkappa(s):
        return -k0 * 20.0 * s / (10.0 * s * s + 1e-4) ** 2

    cot_star = 1.0 / math.tan(math.pi * phi_star)
    lo, hi = clamp_delta, 1.0 - clamp_delta

    def _parts(s):
        s = np.asarray(s, dtype=float)
        inside = (s > lo) & (s < hi)
        sc = np.clip(s, lo, hi)
        sin = np.sin(np.pi * sc)
        cot = np.cos(np.pi * sc) / sin
        z = steepness * (cot_star - cot)
        live = inside & (np.abs(z) < TANH_SATURATION)
        z = np.clip(z, -TANH_SATURATION, TANH_SATURATION)
        th = np.tanh(z)
        sech2 = 1.0 - th * th
        csc2 = 1.0 / (sin * sin)
        dz = steepness * np.pi * csc2
        d2z = -2.0 * steepness * np.pi**2 * csc2 * cot
        return th, sech2, dz, d2z, live

    def A(s):
        return a0 * (1.0 + _parts(s)[0])

    def dA(s):
        th, sech2, dz, _, live = _parts(s)
        return np.where(live, a0 * sech2 * dz, 0.0)

    def d2A(s):
        th, sech2, dz, d2z, live = _parts(s)
        return np.where(live, a0 * (sech2 * d2z - 2.0 * th * sech2 * dz * dz), 0.0)

    params = dict(gamma=gamma, epsilon=epsilon, d0=d0, c0=c0, f0=f0, wells=list(wells),
                  k0=k0, a0=a0, steepness=steepness, phi_star=phi_star,
                  clamp_delta=clamp_delta)
    coeffs = ModelCoefficients(
        gamma=gamma, epsilon=epsilon, d0=d0, b=b, db=db, c=c, dc=dc, A=A, dA=dA,
        d2A=d2A, kappa=kappa, dkappa=dkappa, f=f, df=df, d2f=d2f,
        clamp_delta=clamp_delta, name=name, params=params,
    )
    return coeffs.with_auto_alpha()


PRESET_PARAMETERS = {
    "experiment1": dict(gamma=1e-3, epsilon=1e-3, d0=1.0, c0=4.0 / math.sqrt(10.0),
                        f0=16.0, k0=1e-2, a0=5e-3, steepness=5.0, phi_star=0.5),
    "experiment2": dict(gamma=1e-3, epsilon=1e-3, d0=1.0, c0=1.0 / math.sqrt(10.0),
                        f0=1.0, k0=1e-3, a0=0.5, steepness=10.0, phi_star=0.4),
}


def make_preset(name: str, **overrides) -> ModelCoefficients:
    """Coefficients of a named preset; keyword arguments override parameters.

    For ``experiment2`` the reference mass ``phi_star`` should be overridden
    with the mass of the actual initial data.
    """
    try:
        params = dict(PRESET_PARAMETERS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_PARAMETERS)}") from None
    params.update(overrides)
    return polynomial_family(name=name, **params)


def lower_bound_f1(coeffs: ModelCoefficients, bracket=(-10.0, 11.0),
                   samples: int = 20001) -> float:
    """Smallest ``f1 >= 0`` with ``f, f'' >= -f1`` on the bracket.

    Dense sampling followed by a bounded local refinement of each minimum.
    """
    from scipy.optimize import minimize_scalar

    s = np.linspace(bracket[0], bracket[1], samples)
    step = s[1] - s[0]
    worst = 0.0
    for g in (coeffs.f, coeffs.d2f):
        vals = np.asarray(g(s), dtype=float)
        k = int(np.argmin(vals))
        lo, hi = s[max(k - 1, 0)], s[min(k + 1, samples - 1)]
        best = float(vals[k])
        if hi - lo > 0.5 * step:
            res = minimize_scalar(lambda x: float(g(np.array(x))), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-12})
            best = min(best, float(res.fun))
        worst = max(worst, -best)
    return worst


# ---------------------------------------------------------------------------
# functionals (all evaluated with the space's quadrature rule)

def _coef(u):
    return u.coefficients if isinstance(u, FEFunction) else np.asarray(u, dtype=float)


def energy(space: FESpace, phi, q, coeffs: ModelCoefficients) -> float:
    """Free energy ``int gamma/2 |grad phi|^2 + f(phi) + q^2/2``."""
    p, qq = _coef(phi), _coef(q)
    gp = space.gradients(p)
    integrand = (0.5 * coeffs.gamma * np.sum(gp * gp, axis=-1)
                 + coeffs.f(space.values(p)) + 0.5 * space.values(qq) ** 2)
    return float(np.sum(space.weights * integrand))


def dissipation_density(space: FESpace, phi_bar, mu_bar, q_bar,
                        coeffs: ModelCoefficients) -> np.ndarray:
    p, m, qq = _coef(phi_bar), _coef(mu_bar), _coef(q_bar)
    pv = space.values(p)
    gp = space.gradients(p)
    gm = space.gradients(m)
    qv = space.values(qq)
    gq = space.gradients(qq)
    c = coeffs.c(pv)[..., None]
    # grad(A(phi) q) by the product rule
    grad_Aq = (coeffs.dA(pv) * qv)[..., None] * gp + coeffs.A(pv)[..., None] * gq
    flux = c * gm - coeffs.d0 * grad_Aq
    gm2 = np.sum(gm * gm, axis=-1)
    return (np.sum(flux * flux, axis=-1) / coeffs.d0
            + (coeffs.b(pv) - coeffs.c(pv) ** 2 / coeffs.d0) * gm2
            + coeffs.epsilon * np.sum(gq * gq, axis=-1)
            + coeffs.kappa(pv) * qv * qv)


def dissipation(space: FESpace, phi_bar, mu_bar, q_bar, coeffs: ModelCoefficients) -> float:
    """Dissipation functional evaluated at slab averages."""
    return float(np.sum(space.weights * dissipation_density(space, phi_bar, mu_bar, q_bar, coeffs)))


def relative_energy(space: FESpace, phi, q, phi_hat, q_hat,
                    coeffs: ModelCoefficients, alpha: float | None = None) -> float:
    """Relative energy of ``(phi, q)`` with respect to ``(phi_hat, q_hat)``."""
    if alpha is None:
        alpha = coeffs.alpha
        if not np.isfinite(alpha):
            alpha = coeffs.with_auto_alpha().alpha
    dp = _coef(phi) - _coef(phi_hat)
    dq = _coef(q) - _coef(q_hat)
    ph = space.values(_coef(phi_hat))
    pv = space.values(_coef(phi))
    dpv = pv - ph
    gd = space.gradients(dp)
    dqv = space.values(dq)
    integrand = (0.5 * coeffs.gamma * np.sum(gd * gd, axis=-1)
                 + coeffs.f(pv) - coeffs.f(ph) - coeffs.df(ph) * dpv
                 + 0.5 * alpha * dpv * dpv + 0.5 * dqv * dqv)
    return float(np.sum(space.weights * integrand))


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-step structure diagnostics; step 0 carries no slab quantities."""

    step: int
    t: float
    mass: float
    energy: float
    dissipation: float | None
    identity_residual: float | None
    newton_iterations: int


# ---------------------------------------------------------------------------
# assumption checks

@dataclass(frozen=True)
class CheckResult:
    name: str
    margin: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def format(self) -> str:
        width = max(len(c.name) for c in self.checks)
        lines = [f"{c.name:<{width}}  margin={c.margin: .6e}  {'ok' if c.passed else 'FAIL'}"
                 for c in self.checks]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def validate_assumptions(coeffs: ModelCoefficients, phi_range=(0.0, 1.0),
                         samples: int = 1001, tol: float = 1e-12) -> ValidationReport:
    """Check the structural inequalities on a uniform sample of ``phi_range``.

    Each entry reports the worst sampled margin (negative means violated).
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    s = np.linspace(phi_range[0], phi_range[1], samples)
    f1 = coeffs.f1 if np.isfinite(coeffs.f1) else lower_bound_f1(coeffs)
    b = np.asarray(coeffs.b(s), dtype=float)
    c = np.asarray(coeffs.c(s), dtype=float)
    margins = [
        ("gamma > 0", coeffs.gamma),
        ("epsilon > 0", coeffs.epsilon),
        ("d0 > 0", coeffs.d0),
        ("b >= b1 > 0", float(b.min())),
        ("c >= 0", float(c.min())),
        ("b >= c^2/d0 + epsilon", float(np.min(b - c * c / coeffs.d0 - coeffs.epsilon))),
        ("kappa >= kappa1 > 0", float(np.min(coeffs.kappa(s)))),
        ("A >= 0", float(np.min(coeffs.A(s)))),
        ("f >= -f1", float(np.min(coeffs.f(s))) + f1),
        ("f'' >= -f1", float(np.min(coeffs.d2f(s))) + f1),
    ]
    strict = {"gamma > 0", "epsilon > 0", "d0 > 0", "b >= b1 > 0", "kappa >= kappa1 > 0"}
    checks = []
    for name, m in margins:
        ok = (m > 0) if name in strict else (m >= -tol)
        checks.append(CheckResult(name, float(m), bool(ok and np.isfinite(m))))
    return ValidationReport(tuple(checks))
