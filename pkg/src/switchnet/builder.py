"""Reduced-order abstract subsystems, interconnection conditions and interfaces.

Given a concrete subsystem (A_s, B_s, C_s, D_s) and a projection P_s, the
abstraction (Ahat_s, Bhat_s, Chat_s, Dhat_s) must satisfy, exactly,

    A_s P_s = P_s Ahat_s - B_s Q_s
    D_s     = P_s Dhat_s - B_s T_s
    C_s P_s = Chat_s

The interface u = K(x - P xhat) + Q xhat + R uhat + T what then confines the
error e = x - P xhat to e+ = (A+BK) e + D (w - what) + (B R - P Bhat) uhat.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleConditions,
    RankDeficientP,
    SingularGram,
    ValidationError,
)

# residual Frobenius norm <= LSTSQ_RTOL * (1 + |A P|) counts as exact
LSTSQ_RTOL = 1e-8


class AbstractSubsystem:
    """Per-mode reduced matrices; output space matches the concrete subsystem."""

    def __init__(self, index, ahat, bhat, chat, dhat, hhat=None):
        self.index = int(index)
        self.modes = sorted(ahat)
        first = np.asarray(ahat[self.modes[0]], float)
        self.nhat = first.shape[0]
        self.mhat = np.asarray(bhat[self.modes[0]], float).shape[1]
        self.q = np.asarray(chat[self.modes[0]], float).shape[0]
        self.what_dim = np.asarray(dhat[self.modes[0]], float).shape[1]
        self.dhat_dim = 0
        if hhat:
            self.dhat_dim = np.asarray(hhat[self.modes[0]], float).shape[1]
        self._a, self._b, self._c, self._d, self._h = {}, {}, {}, {}, {}
        for s in self.modes:
            a = np.asarray(ahat[s], float)
            b = np.asarray(bhat[s], float)
            c = np.asarray(chat[s], float)
            d = np.asarray(dhat[s], float)
            if a.shape != (self.nhat, self.nhat):
                raise DimensionMismatch(f"abstract {index} mode {s}: Ahat shape {a.shape}")
            if b.shape != (self.nhat, self.mhat):
                raise DimensionMismatch(f"abstract {index} mode {s}: Bhat shape {b.shape}")
            if c.shape != (self.q, self.nhat):
                raise DimensionMismatch(f"abstract {index} mode {s}: Chat shape {c.shape}")
            if d.shape != (self.nhat, self.what_dim):
                raise DimensionMismatch(f"abstract {index} mode {s}: Dhat shape {d.shape}")
            self._a[s], self._b[s], self._c[s], self._d[s] = a, b, c, d
            if hhat:
                self._h[s] = np.asarray(hhat[s], float)

    def a(self, s):
        return self._a[s]

    def b(self, s):
        return self._b[s]

    def c(self, s):
        return self._c[s]

    def d(self, s):
        return self._d[s]

    def h(self, s):
        if not self._h:
            return np.zeros((self.nhat, 0))
        return self._h[s]


@dataclass
class InterconnectionResult:
    """Solved abstraction matrices and per-mode residuals of the two equations."""

    ahat: dict
    chat: dict
    q: dict
    t: dict
    resid_dynamics: dict      # |P Ahat - B Q - A P|_F per mode
    resid_feedthrough: dict   # |B T - (P Dhat - D)|_F per mode
    tol_dynamics: dict
    tol_feedthrough: dict

    @property
    def exact(self):
        return all(self.resid_dynamics[s] <= self.tol_dynamics[s]
                   and self.resid_feedthrough[s] <= self.tol_feedthrough[s]
                   for s in self.ahat)


def solve_interconnection_conditions(subsystem, p_mats, dhat_mats, strict=True):
    """Minimum-norm least-squares solve of the interconnection conditions.

    Chat = C P exactly; (Ahat, Q) solves P Ahat - B Q = A P columnwise through
    the stacked operator [P, -B]; T solves B T = P Dhat - D. Residuals are
    reported per mode; with strict=True a residual above tolerance raises
    InfeasibleConditions naming the equation and mode (the conditions demand
    equality, so near-equality must be explicit).
    """
    ahat, chat, q_mats, t_mats = {}, {}, {}, {}
    rd, rf, td, tf = {}, {}, {}, {}
    for s in subsystem.modes:
        dyn = subsystem.dynamics(s)
        p = np.asarray(p_mats[s], float)
        if p.ndim != 2 or p.shape[0] != subsystem.n:
            raise DimensionMismatch(f"mode {s}: P shape {p.shape}, expected ({subsystem.n}, nhat)")
        nhat = p.shape[1]
        if np.linalg.matrix_rank(p) < nhat:
            raise RankDeficientP(f"subsystem {subsystem.index} mode {s}: P rank < {nhat}")
        dhat = np.asarray(dhat_mats[s], float)
        if dhat.shape != (nhat, subsystem.w):
            raise DimensionMismatch(
                f"mode {s}: Dhat shape {dhat.shape}, expected {(nhat, subsystem.w)}")

        ap = dyn.a @ p
        stacked = np.hstack([p, -dyn.b])
        sol, _, _, _ = np.linalg.lstsq(stacked, ap, rcond=None)
        ahat[s] = sol[:nhat, :]
        q_mats[s] = sol[nhat:, :]
        rd[s] = float(np.linalg.norm(stacked @ sol - ap))
        td[s] = LSTSQ_RTOL * (1.0 + np.linalg.norm(ap))

        chat[s] = dyn.c @ p

        rhs = p @ dhat - dyn.d
        tsol, _, _, _ = np.linalg.lstsq(dyn.b, rhs, rcond=None)
        t_mats[s] = tsol
        rf[s] = float(np.linalg.norm(dyn.b @ tsol - rhs))
        tf[s] = LSTSQ_RTOL * (1.0 + np.linalg.norm(rhs))

        if strict:
            if rd[s] > td[s]:
                raise InfeasibleConditions(
                    f"subsystem {subsystem.index} mode {s}: dynamics condition residual "
                    f"{rd[s]:.3e} > tol {td[s]:.3e}")
            if rf[s] > tf[s]:
                raise InfeasibleConditions(
                    f"subsystem {subsystem.index} mode {s}: feedthrough condition residual "
                    f"{rf[s]:.3e} > tol {tf[s]:.3e}")
    return InterconnectionResult(ahat, chat, q_mats, t_mats, rd, rf, td, tf)


def solve_exogenous_matching(subsystem, p_mats, strict=True):
    """Match the exogenous channel: H = P Hhat - B T_exo per mode, least squares.

    Returns (hhat, t_exo, residuals). With an exact match a constant
    disturbance fed to both sides cancels from the error dynamics.
    """
    hhat, t_exo, resid = {}, {}, {}
    for s in subsystem.modes:
        dyn = subsystem.dynamics(s)
        if dyn.h is None:
            continue
        p = np.asarray(p_mats[s], float)
        nhat = p.shape[1]
        stacked = np.hstack([p, -dyn.b])
        sol, _, _, _ = np.linalg.lstsq(stacked, dyn.h, rcond=None)
        hhat[s] = sol[:nhat, :]
        t_exo[s] = sol[nhat:, :]   # H = P Hhat - B T_exo, interface adds T_exo d
        r = float(np.linalg.norm(stacked @ sol - dyn.h))
        resid[s] = r
        if strict and r > LSTSQ_RTOL * (1.0 + np.linalg.norm(dyn.h)):
            raise InfeasibleConditions(
                f"subsystem {subsystem.index} mode {s}: exogenous matching residual {r:.3e}")
    return hhat, t_exo, resid


def compute_interface_gain_R(b, m, p, bhat):
    """M-weighted least-squares gain: R = (B'MB)^-1 B'M P Bhat.

    Minimizes |sqrt(M)(B R - P Bhat)| over R, the abstract-input mismatch
    entering rho_ext.
    """
    b = np.asarray(b, float)
    m = np.asarray(m, float)
    if not b.shape[1]:
        return np.zeros((0, np.asarray(bhat).shape[1]))
    gram = b.T @ m @ b
    if np.linalg.cond(gram) > 1e12:
        raise SingularGram(f"B'MB condition number {np.linalg.cond(gram):.3e}")
    rhs = b.T @ m @ np.asarray(p, float) @ np.asarray(bhat, float)
    return np.linalg.solve(gram, rhs)


@dataclass
class LinearInterface:
    """u = K (x - P xhat) + Q xhat + R uhat + T what [+ T_exo d]."""

    k: dict
    p: dict
    q: dict
    r: dict
    t: dict
    t_exo_mats: Optional[dict] = None

    def __call__(self, x, xhat, uhat, what, mode):
        u = self.k[mode] @ (np.asarray(x, float) - self.p[mode] @ np.asarray(xhat, float))
        u = u + self.q[mode] @ np.asarray(xhat, float)
        u = u + self.r[mode] @ np.asarray(uhat, float)
        if self.t[mode].shape[1]:
            u = u + self.t[mode] @ np.asarray(what, float)
        return u

    def batch(self, x, xhat, uhat, what, mode):
        """Vectorized evaluation over leading sample axis."""
        u = (np.asarray(x, float) - np.asarray(xhat, float) @ self.p[mode].T) @ self.k[mode].T
        u = u + np.asarray(xhat, float) @ self.q[mode].T
        u = u + np.asarray(uhat, float) @ self.r[mode].T
        if self.t[mode].shape[1]:
            u = u + np.asarray(what, float) @ self.t[mode].T
        return u

    def t_exo(self, mode):
        if self.t_exo_mats is None:
            m_rows = self.k[mode].shape[0]
            return np.zeros((m_rows, 0))
        return self.t_exo_mats[mode]


def interface_nu(x, xhat, uhat, what, mode, certificate):
    """Interface evaluation from a completed certificate (exact, deterministic)."""
    iface = LinearInterface(k=certificate.k, p=certificate.p, q=certificate.q,
                            r=certificate.r, t=certificate.t)
    return iface(x, xhat, uhat, what, mode)


def step_abstract(xhat, what, uhat, mode, abstract: AbstractSubsystem):
    """One abstract step: xhat+ = Ahat xhat + Dhat what + Bhat uhat, yhat = Chat xhat."""
    xhat = np.asarray(xhat, float)
    nxt = abstract.a(mode) @ xhat + abstract.b(mode) @ np.asarray(uhat, float)
    if abstract.what_dim:
        nxt = nxt + abstract.d(mode) @ np.asarray(what, float)
    return nxt, abstract.c(mode) @ xhat


@dataclass
class AbstractionBundle:
    """Everything needed to run one certified concrete/abstract pair."""

    subsystem_index: int
    abstract: AbstractSubsystem
    certificate: object                 # LocalCertificate with interface attached
    interface: LinearInterface
    interconnection: InterconnectionResult
    exo_residuals: dict = field(default_factory=dict)


def build_abstraction(subsystem, cert, p_mats, dhat_mats, bhat_mats=None,
                      strict=True, match_exogenous=True):
    """Solve the interconnection conditions and assemble the certified bundle.

    Bhat defaults to the identity on the abstract state. The interface gain R
    is the rho_ext-minimizing M-weighted projection per mode. The certificate
    is returned with (p, q, t, r) attached and gain scalars recomputed.
    """
    from dataclasses import replace

    from .certify import compute_gain_scalars, compute_tau

    res = solve_interconnection_conditions(subsystem, p_mats, dhat_mats, strict=strict)
    nhat = np.asarray(p_mats[subsystem.modes[0]], float).shape[1]
    if bhat_mats is None:
        bhat_mats = {s: np.eye(nhat) for s in subsystem.modes}

    r_mats = {}
    b_mats = {}
    for s in subsystem.modes:
        dyn = subsystem.dynamics(s)
        b_mats[s] = dyn.b
        r_mats[s] = compute_interface_gain_R(dyn.b, cert.m[s], p_mats[s], bhat_mats[s])

    hhat, t_exo, exo_res = {}, None, {}
    if match_exogenous and subsystem.d_dim:
        hhat, t_exo, exo_res = solve_exogenous_matching(subsystem, p_mats, strict=strict)

    abstract = AbstractSubsystem(subsystem.index, res.ahat, bhat_mats, res.chat,
                                 {s: np.asarray(dhat_mats[s], float) for s in subsystem.modes},
                                 hhat or None)

    cert = replace(cert, p={s: np.asarray(p_mats[s], float) for s in subsystem.modes},
                   q=res.q, t=res.t, r=r_mats)
    tau_res = compute_tau(cert.m, cert.p)
    cert = replace(cert, tau=tau_res.tau, tau_exact=tau_res.exact)
    d_mats = {s: subsystem.dynamics(s).d for s in subsystem.modes}
    cert = compute_gain_scalars(cert, d_mats, b_mats, cert.p, bhat_mats, r_mats)

    iface = LinearInterface(k=cert.k, p=cert.p, q=cert.q, r=cert.r, t=cert.t,
                            t_exo_mats=t_exo)
    return AbstractionBundle(subsystem.index, abstract, cert, iface, res, exo_res)


def identity_abstraction(subsystem, cert, bhat_mats=None):
    """Degenerate abstraction P = I, Dhat = D: reproduces (A, C, 0, 0) exactly."""
    eye = {s: np.eye(subsystem.n) for s in subsystem.modes}
    dhat = {s: subsystem.dynamics(s).d for s in subsystem.modes}
    return build_abstraction(subsystem, cert, eye, dhat, bhat_mats=bhat_mats)
