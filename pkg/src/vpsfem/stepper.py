"""Implicit space-time Galerkin stepping with exact mass and energy balance.

On each slab ``(t_{n-1}, t_n)`` the trial functions ``phi`` and ``q`` are
linear in time and ``mu`` is constant.  Testing with slab constants reduces
the scheme to a midpoint-type system for ``x = [phi^n | mu | q^n]``::

    <phi^n - phi^{n-1}, psi> + tau <b grad mu - c grad(A qb), grad psi> = 0
    <mu, xi> - gamma <grad pb, grad xi> - avg_s <f'(phi(s)), xi>    = 0
    <q^n - q^{n-1}, z> + tau (<d0 grad(A qb) - c grad mu, grad(A z)>
                              + <kappa qb, z> + eps <grad qb, grad z>) = 0

where ``pb``, ``qb`` are the slab averages, all coefficients are evaluated at
``pb`` and ``avg_s`` is the 3-point Gauss average along the linear path
``phi(s) = phi^{n-1} + s (phi^n - phi^{n-1})``.  Gauss-3 integrates the
resulting polynomial exactly for quartic ``f``, so testing with
``(mu, phi^n - phi^{n-1}, qb)`` reproduces the energy balance
``E^n - E^{n-1} + tau D = 0`` at the level of the spatial quadrature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem import FEFunction, FESpace, SolverError, factorize, nested_dissection
from .model import DiagnosticsRecord, ModelCoefficients, dissipation, energy
from .quadrature import gauss_legendre_unit

log = logging.getLogger(__name__)

GAUSS_S, GAUSS_W = gauss_legendre_unit(3)


class NewtonError(RuntimeError):
    """Newton iteration failed on a time slab."""

    def __init__(self, message: str, residual: float, step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-11
    max_iter: int = 25
    damping: bool = True
    max_halvings: int = 8
    globalize: bool = True
    max_descent_iter: int = 400

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and self.N >= 1):
            raise ValueError("need T > 0 and N >= 1")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def t(self, n: int) -> float:
        return n * self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.T / self.N


@dataclass
class StepStats:
    iterations: int
    residual_history: list[float]
    method: str = "newton"


@dataclass
class Trajectory:
    """Discrete solution: nodal ``phi``, ``q`` and per-slab ``mu``."""

    space: FESpace
    grid: TimeGrid
    phi_nodes: np.ndarray  # (N+1, ndof)
    q_nodes: np.ndarray  # (N+1, ndof)
    mu_slabs: np.ndarray  # (N, ndof)
    diagnostics: list[DiagnosticsRecord] = field(default_factory=list)

    def phi(self, n: int) -> FEFunction:
        return FEFunction(self.space, self.phi_nodes[n])

    def q(self, n: int) -> FEFunction:
        return FEFunction(self.space, self.q_nodes[n])

    def mu(self, n: int) -> FEFunction:
        """Chemical potential on slab ``n`` (1-based, as ``(t_{n-1}, t_n)``)."""
        return FEFunction(self.space, self.mu_slabs[n - 1])


# ---------------------------------------------------------------------------
# residual and Jacobian

def _split(x: np.ndarray, nd: int):
    return x[:nd], x[nd:2 * nd], x[2 * nd:]


def _step_forms(space: FESpace, coeffs: ModelCoefficients, x: np.ndarray,
                phi_prev: np.ndarray, q_prev: np.ndarray, tau: float,
                mode: str | None):
    """Residual and Jacobian block data of the slab equations.

    ``mode`` is ``None`` (residual only), ``"full"`` (exact Jacobian) or
    ``"frozen"`` (coefficient fields held fixed at the current ``pb``).
    """
    nd = space.dof_count
    P, M, Q = _split(x, nd)
    pb = 0.5 * (P + phi_prev)
    qbar = 0.5 * (Q + q_prev)

    p = space.values(pb)
    gp = space.gradients(pb)
    gm = space.gradients(M)
    mv = space.values(M)
    qb = space.values(qbar)
    gq = space.gradients(qbar)
    Pv = space.values(P)
    P0v = space.values(phi_prev)
    dP = Pv - P0v
    dQ = space.values(Q - q_prev)

    d0, eps, gamma = coeffs.d0, coeffs.epsilon, coeffs.gamma
    b, c = coeffs.b(p), coeffs.c(p)
    A, dA = coeffs.A(p), coeffs.dA(p)
    kap = coeffs.kappa(p)

    e = lambda s: s[..., None]  # noqa: E731
    G = e(dA * qb) * gp + e(A) * gq  # grad(A qb)
    J = e(b) * gm - e(c) * G
    H = d0 * G - e(c) * gm
    Hgp = np.sum(H * gp, axis=-1)

    fprime = np.zeros_like(Pv)
    for s, w in zip(GAUSS_S, GAUSS_W):
        fprime += w * coeffs.df(P0v + s * dP)

    r1 = space.load_vector(rv=dP, rg=tau * J)
    r2 = space.load_vector(rv=mv - fprime, rg=-gamma * gp)
    r3 = space.load_vector(rv=dQ + tau * (dA * Hgp + kap * qb),
                           rg=tau * (e(A) * H + eps * gq))
    residual = np.concatenate([r1, r2, r3])
    if mode is None:
        return residual, None

    # partial derivatives at quadrature points with respect to
    # p (value), gp, gm, qb, gq; gradient partials are multiples of I
    dG_qb = e(dA) * gp
    dG_gq = A
    dJ_gm = b
    dJ_qb = -e(c) * dG_qb
    dJ_gq = -c * dG_gq
    dH_gm = -c
    dH_qb = d0 * dG_qb
    dH_gq = d0 * dG_gq
    v3_gm = e(dA * dH_gm) * gp
    v3_qb = dA * np.sum(dH_qb * gp, axis=-1) + kap
    v3_gq = e(dA * dH_gq) * gp
    g3_gm = A * dH_gm
    g3_qb = e(A) * dH_qb
    g3_gq = A * dH_gq + eps

    dfp = np.zeros_like(Pv)
    for s, w in zip(GAUSS_S, GAUSS_W):
        dfp += w * s * coeffs.d2f(P0v + s * dP)

    h = 0.5  # d(pb)/dP = d(qb)/dQ
    ones = np.ones_like(p)
    lm = space.local_matrix
    blocks = [[None] * 3 for _ in range(3)]
    # rows: eq1, eq2, eq3; columns: P, M, Q
    blocks[0][1] = lm(gg=tau * dJ_gm)
    blocks[0][2] = lm(gv=tau * h * dJ_qb, gg=tau * h * dJ_gq)
    blocks[1][0] = lm(vv=-dfp, gg=-gamma * h * ones)
    blocks[1][1] = lm(vv=ones)
    blocks[2][1] = lm(vg=tau * v3_gm, gg=tau * g3_gm)
    blocks[2][2] = lm(vv=ones + tau * h * v3_qb, vg=tau * h * v3_gq,
                      gv=tau * h * g3_qb, gg=tau * h * g3_gq)
    if mode == "frozen":
        blocks[0][0] = lm(vv=ones)
    else:
        db, dc = coeffs.db(p), coeffs.dc(p)
        d2A, dkap = coeffs.d2A(p), coeffs.dkappa(p)
        dG_p = e(d2A * qb) * gp + e(dA) * gq
        dG_gp = dA * qb
        dJ_p = e(db) * gm - e(dc) * G - e(c) * dG_p
        dJ_gp = -c * dG_gp
        dH_p = d0 * dG_p - e(dc) * gm
        dH_gp = d0 * dG_gp
        # eq3 value part: dA * (H . gp) + kappa qb
        v3_p = d2A * Hgp + dA * np.sum(dH_p * gp, axis=-1) + dkap * qb
        v3_gp = e(dA) * (H + e(dH_gp) * gp)
        # eq3 gradient part: A H + eps gq
        g3_p = e(dA) * H + e(A) * dH_p
        g3_gp = A * dH_gp
        blocks[0][0] = lm(vv=ones, gv=tau * h * dJ_p, gg=tau * h * dJ_gp)
        blocks[2][0] = lm(vv=tau * h * v3_p, vg=tau * h * v3_gp,
                          gv=tau * h * g3_p, gg=tau * h * g3_gp)
    data = [[space.scatter(blk) if blk is not None else None for blk in row]
            for row in blocks]
    return residual, data


def assemble_step_system(space: FESpace, coeffs: ModelCoefficients, x: np.ndarray,
                         phi_prev: np.ndarray, q_prev: np.ndarray, tau: float,
                         jacobian: bool = True):
    """Residual of the slab equations and (optionally) its exact Jacobian.

    ``x`` stacks ``[phi^n | mu | q^n]``.  The Jacobian is returned as CSR.
    """
    residual, data = _step_forms(space, coeffs, x, phi_prev, q_prev, tau,
                                 "full" if jacobian else None)
    if not jacobian:
        return residual
    return residual, space.block_matrix(data)


# ---------------------------------------------------------------------------
# Newton

def _residual_norm(space: FESpace, r: np.ndarray) -> float:
    # residual entries are integrals against basis functions, O(1/ndof)
    return float(space.dof_count * np.max(np.abs(r)))


def discrete_chemical_potential(space: FESpace, coeffs: ModelCoefficients,
                                phi: np.ndarray) -> np.ndarray:
    """``mu`` with ``<mu, xi> = gamma <grad phi, grad xi> + <f'(phi), xi>``."""
    rhs = (coeffs.gamma * (space.stiffness_matrix @ phi)
           + space.load_vector(rv=coeffs.df(space.values(phi))))
    return space._mass_lu.solve(rhs)


class LinearSolver:
    """Newton linear solves that recycle an LU factorisation.

    A stored factorisation of an earlier Jacobian serves as a GMRES
    preconditioner; the Jacobian is refactorised only when the recycled
    solve misses the requested relative tolerance within ``max_krylov``
    iterations.
    """

    def __init__(self, space: FESpace, max_krylov: int = 10):
        self.order = nested_dissection(space, 3)
        self.max_krylov = max_krylov
        self.factorizations = 0
        self._fac = None

    def solve(self, J, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
        if self._fac is not None:
            x = self._recycled(J, b, rtol)
            if x is not None:
                return x
        self._fac = factorize(J, self.order)
        self.factorizations += 1
        return self._fac.solve(b)

    def _recycled(self, J, b: np.ndarray, rtol: float) -> np.ndarray | None:
        prec = spla.LinearOperator(J.shape, matvec=self._fac.precondition, dtype=float)
        x, _ = spla.gmres(J, b, rtol=0.5 * rtol, atol=0.0, restart=self.max_krylov,
                          maxiter=1, M=prec)
        if not np.all(np.isfinite(x)):
            return None
        bn = float(np.linalg.norm(b))
        if float(np.linalg.norm(J @ x - b)) > rtol * max(bn, 1e-300):
            return None
        return x


def _forcing(rn: float) -> float:
    # inexact Newton: loose linear solves far from the root, tight near it
    return min(1e-3, max(1e-10, 1e-3 * rn))


def _newton(space, coeffs, x, phi_prev, q_prev, tau, cfg: NewtonConfig, history,
            solver: LinearSolver):
    """Damped Newton on the slab residual; returns the converged state."""
    r, Jac = assemble_step_system(space, coeffs, x, phi_prev, q_prev, tau)
    rn = _residual_norm(space, r)
    history.append(rn)
    it = 0
    while rn > cfg.tol:
        if it >= cfg.max_iter:
            raise NewtonError(
                f"Newton did not converge in {cfg.max_iter} iterations "
                f"(scaled residual {rn:.3e})", rn)
        try:
            dx = -solver.solve(Jac, r, _forcing(rn))
        except SolverError as exc:
            raise NewtonError(f"linear solve failed: {exc}", rn) from exc
        it += 1
        lam = 1.0
        x_new = x + dx
        r_new = assemble_step_system(space, coeffs, x_new, phi_prev, q_prev, tau,
                                     jacobian=False)
        rn_new = _residual_norm(space, r_new)
        if cfg.damping:
            halvings = 0
            while not rn_new < rn and halvings < cfg.max_halvings:
                lam *= 0.5
                halvings += 1
                x_new = x + lam * dx
                r_new = assemble_step_system(space, coeffs, x_new, phi_prev, q_prev,
                                             tau, jacobian=False)
                rn_new = _residual_norm(space, r_new)
            if not rn_new < rn and rn > 1e3 * cfg.tol:
                raise NewtonError(
                    f"no residual decrease after {cfg.max_halvings} step halvings "
                    f"(scaled residual {rn:.3e})", rn)
        if not np.isfinite(rn_new):
            raise NewtonError("Newton iterate became non-finite", rn)
        step_size = float(np.max(np.abs(x_new - x)))
        x = x_new
        history.append(rn_new)
        if rn_new >= rn and step_size <= 1e-14 * max(1.0, float(np.max(np.abs(x)))):
            # stagnation at round-off level
            if rn_new <= 1e3 * cfg.tol:
                break
            raise NewtonError(f"Newton stagnated at scaled residual {rn_new:.3e}", rn_new)
        rn = rn_new
        if rn > cfg.tol:
            r, Jac = assemble_step_system(space, coeffs, x, phi_prev, q_prev, tau)
    return x, it


class _SlabPotential:
    """Path potential of the slab equations for the increments ``v = (u, w)``.

    ``Psi(u, w) = gamma <grad phi_prev, grad u> + gamma/4 |grad u|^2
    + sum_s w_s/s <f(phi_prev + s u) - f(phi_prev), 1> + <q_prev, w> + |w|^2/4``
    has gradient ``(M mu, M qb)`` with ``mu`` from the second slab equation.
    With the coefficient fields frozen, the slab equations are the
    stationarity conditions of ``Psi(v) + (M v)^T K^+ (M v) / (2 tau)``,
    where ``K`` is the (positive semidefinite) mobility operator.
    """

    def __init__(self, space: FESpace, coeffs: ModelCoefficients,
                 phi_prev: np.ndarray, q_prev: np.ndarray):
        self.space = space
        self.coeffs = coeffs
        self.p0 = space.values(phi_prev)
        self.gp0 = space.gradients(phi_prev)
        self.q0 = space.values(q_prev)
        self.f0 = coeffs.f(self.p0)

    def __call__(self, u: np.ndarray, w: np.ndarray) -> float:
        sp_, co = self.space, self.coeffs
        uv, gu, wv = sp_.values(u), sp_.gradients(u), sp_.values(w)
        dens = (co.gamma * np.sum(self.gp0 * gu, axis=-1)
                + 0.25 * co.gamma * np.sum(gu * gu, axis=-1)
                + self.q0 * wv + 0.25 * wv * wv)
        for s, ws in zip(GAUSS_S, GAUSS_W):
            dens = dens + (ws / s) * (co.f(self.p0 + s * uv) - self.f0)
        return float(np.sum(sp_.weights * dens))


def _mobility_factor(space: FESpace, data, tau: float, mass_data: np.ndarray):
    """Factorise the frozen mobility operator, pinned at the first ``mu`` DOF."""
    h = 0.5
    kbb = data[0][1] / tau
    kbq = data[0][2] / (tau * h)
    kqb = data[2][1] / tau
    kqq = (data[2][2] - mass_data) / (tau * h)
    # K only determines mu up to a constant; fix mu_0 = 0 (the right-hand
    # sides below are compatible, so the other equations are unaffected)
    row0 = np.zeros(space.nnz, dtype=bool)
    row0[space.indptr[0]:space.indptr[1]] = True
    col0 = space.indices == 0
    kbb = np.where(row0 | col0, 0.0, kbb)
    kbb[row0 & col0] = 1.0
    kbq = np.where(row0, 0.0, kbq)
    kqb = np.where(col0, 0.0, kqb)
    fac = factorize(space.block_matrix([[kbb, kbq], [kqb, kqq]]),
                    nested_dissection(space, 2))

    def solve(y: np.ndarray) -> np.ndarray:
        y = y.copy()
        y[0] = 0.0
        return fac.solve(y)

    return solve


def _descent(space, coeffs, phi_prev, q_prev, tau, cfg: NewtonConfig, history):
    """Globalised solve of the slab equations through their variational form.

    Each iteration freezes the coefficient fields at the current midpoint and
    takes a Newton step for the stationarity system, with the ``phi``-Hessian
    shifted by ``sigma M`` when needed.  ``sigma >= f1 / 2`` makes the step a
    descent direction for the frozen functional, so an Armijo line search on
    it always makes progress.  Close to a root the exact Jacobian takes over.
    """
    nd = space.dof_count
    order = nested_dissection(space, 3)
    M = space.mass_matrix
    mass_data = space.scatter(space.local_matrix(vv=np.ones(space.weights.shape)))
    potential = _SlabPotential(space, coeffs, phi_prev, q_prev)
    f1 = coeffs.f1 if np.isfinite(coeffs.f1) else 0.0
    sigma_safe = 0.525 * max(f1, 0.0) + 1e-8
    sigma = 0.0
    use_exact = False

    x = np.concatenate([phi_prev, discrete_chemical_potential(space, coeffs, phi_prev),
                        q_prev])
    for it in range(cfg.max_descent_iter):
        P, Mu, Q = _split(x, nd)
        r, data = _step_forms(space, coeffs, x, phi_prev, q_prev, tau, "frozen")
        rn = _residual_norm(space, r)
        history.append(rn)
        if rn <= cfg.tol:
            return x, it
        if use_exact:
            r_ex, Jac = assemble_step_system(space, coeffs, x, phi_prev, q_prev, tau)
            x_ex = x + factorize(Jac, order).solve(-r_ex)
            r_new = assemble_step_system(space, coeffs, x_ex, phi_prev, q_prev, tau,
                                         jacobian=False)
            if _residual_norm(space, r_new) < 0.5 * rn:
                x = x_ex
                continue
            use_exact = False

        u, w = P - phi_prev, Q - q_prev
        kplus = _mobility_factor(space, data, tau, mass_data)
        Mv = np.concatenate([M @ u, M @ w])
        z = kplus(Mv)
        grad = np.concatenate([M @ Mu - r[nd:2 * nd], M @ (0.5 * (Q + q_prev))])
        grad += np.concatenate([M @ z[:nd], M @ z[nd:]]) / tau
        value0 = potential(u, w) + 0.5 * (Mv @ z) / tau

        for _ in range(4):
            shifted = [row[:] for row in data]
            if sigma > 0:
                shifted[1][0] = shifted[1][0] - sigma * mass_data
            dx = factorize(space.block_matrix(shifted), order).solve(-r)
            du, dw = dx[:nd], dx[2 * nd:]
            slope = float(grad @ np.concatenate([du, dw]))
            if slope < 0:
                break
            sigma = max(sigma_safe, 4.0 * sigma)
        else:
            raise NewtonError("no descent direction for the slab functional", rn)

        Mdv = np.concatenate([M @ du, M @ dw])
        zd = kplus(Mdv)
        qa, qb_, qc = Mv @ z, Mdv @ z, Mdv @ zd
        alpha = 1.0
        while True:
            value = (potential(u + alpha * du, w + alpha * dw)
                     + 0.5 * (qa + 2 * alpha * qb_ + alpha ** 2 * qc) / tau)
            if value <= value0 + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-10:
                break
        if alpha < 1e-10:
            if sigma < sigma_safe:
                sigma = sigma_safe
                continue
            raise NewtonError("line search failed on the slab functional", rn)

        P = P + alpha * du
        Q = Q + alpha * dw
        x = np.concatenate([P, Mu, Q])
        # restore the second slab equation exactly
        r2 = _step_forms(space, coeffs, x, phi_prev, q_prev, tau, None)[0][nd:2 * nd]
        x[nd:2 * nd] = Mu - space._mass_lu.solve(r2)
        if alpha == 1.0:
            if sigma > 0:
                sigma = 0.25 * sigma if sigma > 0.01 * sigma_safe else 0.0
            elif rn < 1e-2:
                use_exact = True
    raise NewtonError(
        f"globalised solve did not converge in {cfg.max_descent_iter} iterations", rn)


def solve_time_step(space: FESpace, coeffs: ModelCoefficients, phi_prev, q_prev,
                    tau: float, cfg: NewtonConfig = NewtonConfig(),
                    mu_guess: np.ndarray | None = None,
                    solver: LinearSolver | None = None):
    """Advance one slab; returns ``(phi_next, q_next, mu_slab, stats)`` as arrays.

    Plain damped Newton is tried first.  If it fails and ``cfg.globalize`` is
    set, the slab is re-solved from the previous state by the descent method
    of :func:`_descent`.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    phi_prev = np.asarray(getattr(phi_prev, "coefficients", phi_prev), dtype=float)
    q_prev = np.asarray(getattr(q_prev, "coefficients", q_prev), dtype=float)
    nd = space.dof_count
    if mu_guess is None:
        mu_guess = discrete_chemical_potential(space, coeffs, phi_prev)
    x0 = np.concatenate([phi_prev, mu_guess, q_prev])
    history: list[float] = []
    try:
        if solver is None:
            solver = LinearSolver(space)
        x, it = _newton(space, coeffs, x0, phi_prev, q_prev, tau, cfg, history, solver)
        method = "newton"
    except NewtonError as exc:
        if not cfg.globalize:
            raise NewtonError(f"{exc}; try a smaller time step", exc.residual) from exc
        log.debug("Newton failed (%s); switching to the globalised solve", exc)
        spent = len(history) - 1
        try:
            x, it = _descent(space, coeffs, phi_prev, q_prev, tau, cfg, history)
        except NewtonError as exc2:
            raise NewtonError(f"{exc2}; try a smaller time step", exc2.residual) from exc2
        it += spent
        method = "descent"
    P, M, Q = _split(x, nd)
    return P.copy(), Q.copy(), M.copy(), StepStats(it, history, method)


def run_simulation(space: FESpace, coeffs: ModelCoefficients, grid: TimeGrid,
                   phi0, q0, cfg: NewtonConfig = NewtonConfig(),
                   progress=None) -> Trajectory:
    """Run all slabs of ``grid`` from the given initial state."""
    phi0 = np.asarray(getattr(phi0, "coefficients", phi0), dtype=float)
    q0 = np.asarray(getattr(q0, "coefficients", q0), dtype=float)
    nd = space.dof_count
    N, tau = grid.N, grid.tau
    phis = np.empty((N + 1, nd))
    qs = np.empty((N + 1, nd))
    mus = np.empty((N, nd))
    phis[0], qs[0] = phi0, q0
    ones = np.ones(nd)
    M = space.mass_matrix
    e_prev = energy(space, phi0, q0, coeffs)
    records = [DiagnosticsRecord(0, 0.0, float(ones @ (M @ phi0)), e_prev, None, None, 0)]
    mu_guess = None
    solver = LinearSolver(space)
    for n in range(1, N + 1):
        try:
            P, Q, Mu, stats = solve_time_step(space, coeffs, phis[n - 1], qs[n - 1], tau,
                                              cfg, mu_guess, solver)
        except NewtonError as exc:
            exc.step = n
            raise NewtonError(f"step {n} (t={grid.t(n):.6g}): {exc}", exc.residual, n) from exc
        phis[n], qs[n], mus[n - 1] = P, Q, Mu
        mu_guess = Mu
        e_n = energy(space, P, Q, coeffs)
        d_n = dissipation(space, 0.5 * (P + phis[n - 1]), Mu, 0.5 * (Q + qs[n - 1]), coeffs)
        records.append(DiagnosticsRecord(
            n, grid.t(n), float(ones @ (M @ P)), e_n, d_n,
            abs(e_n - e_prev + tau * d_n), stats.iterations))
        e_prev = e_n
        log.debug("step %d/%d: %d Newton iterations, residuals %s", n, N,
                  stats.iterations, ", ".join(f"{v:.1e}" for v in stats.residual_history))
        if progress is not None:
            progress(n, N)
    return Trajectory(space, grid, phis, qs, mus, records)


def newton_order_estimate(history: list[float]) -> float:
    """Observed convergence order from the last three residual norms."""
    r = [v for v in history if v > 0]
    if len(r) < 3:
        return math.nan
    a, b, c = r[-3:]
    return math.log(c / b) / math.log(b / a)
