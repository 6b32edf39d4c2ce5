"""Local simulation-function certificates for switched linear subsystems.

A certificate for subsystem (A_s, B_s, C_s, D_s) is a family of positive
definite matrices M_s together with feedback gains K_s and scalars
(kappa, eps) such that for every mode s

    C_s' C_s  <=  M_s                                   (output floor)
    (1 + eps + 1/eps) (A_s+B_s K_s)' M_s (A_s+B_s K_s)  <=  kappa M_s

The quadratic forms V_s(x, xhat) = |x - P_s xhat|^2_{M_s} then dissipate at
rate lam = 1 - tau*kappa against neighbor mismatch and abstract-input gains
(rho_int, rho_ext), where tau bounds the jump of V across mode changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (
    CertificateInfeasible,
    NumericalFailure,
    SpectralRadiusTooLarge,
    ValidationError,
)

# relative eigenvalue tolerance for semidefinite checks; ties at zero count as satisfied
PSD_RTOL = 1e-9


def default_delta(c):
    """Regularization for the Lyapunov right-hand side: 1e-6 * trace(C'C + I)."""
    c = np.asarray(c, dtype=float)
    n = c.shape[1]
    return 1e-6 * (np.trace(c.T @ c) + n)


def contraction_factor(eps):
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    return 1.0 + eps + 1.0 / eps


def spectral_radius_threshold(kappa, eps):
    """Feasibility boundary for the Lyapunov construction: rho(A+BK) < sqrt(kappa/c)."""
    if not 0 < kappa < 1:
        raise ValidationError(f"kappa must lie in (0,1), got {kappa}")
    return float(np.sqrt(kappa / contraction_factor(eps)))


def place_feedback(a, b, poles):
    """State feedback K with eig(A + B K) at the requested locations.

    Thin wrapper over scipy pole placement (which computes A - B K_pp);
    K is returned in the A + B K convention used throughout.
    """
    from scipy.signal import place_poles

    res = place_poles(np.asarray(a, float), np.asarray(b, float), np.asarray(poles))
    return -res.gain_matrix


def sym_sqrt(m):
    """Symmetric PSD square root via eigendecomposition (deterministic)."""
    w, v = np.linalg.eigh(np.asarray(m, float))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


@dataclass
class LocalCertificate:
    """Per-mode certificate matrices plus the scalars entering the gain operator.

    Interface matrices (p, q, t, r per mode) are attached once the abstraction
    is built; `rho_ext` is only meaningful afterwards. Norm exponents are
    p = q = 2 throughout.
    """

    m: dict                       # mode -> M_s (n x n SPD)
    k: dict                       # mode -> K_s (m x n)
    kappa: float
    eps: float
    alpha: float = 1.0
    tau: float = 1.0
    tau_exact: bool = True
    lam: Optional[float] = None
    rho_int: Optional[float] = None
    rho_ext: Optional[float] = None
    p: Optional[dict] = None      # mode -> P_s (n x nhat)
    q: Optional[dict] = None      # mode -> Q_s (m x nhat)
    t: Optional[dict] = None      # mode -> T_s (m x w)
    r: Optional[dict] = None      # mode -> R_s (m x mhat)

    @property
    def modes(self):
        return sorted(self.m)

    def value(self, x, xhat, mode):
        """V_s(x, xhat) = (x - P_s xhat)' M_s (x - P_s xhat)."""
        e = np.asarray(x, float)
        if self.p is not None and xhat is not None:
            e = e - self.p[mode] @ np.asarray(xhat, float)
        return float(e @ self.m[mode] @ e)


def solve_lyapunov_certificate(subsystem, k_gains, kappa, eps, delta=None):
    """Certificate matrices from the exact discrete Lyapunov construction.

    For each mode, with Atil = sqrt((1+eps+1/eps)/kappa) (A + B K), solves

        Atil' M Atil - M = -(C'C + delta I) / kappa

    which is feasible iff rho(A + B K) < sqrt(kappa / (1+eps+1/eps)). The
    solution satisfies the output floor (kappa < 1 scales C'C up) and the
    contraction inequality with margin delta/kappa by construction.

    Returns a LocalCertificate with alpha = 1 and tau/lam/gains unset.
    """
    thresh = spectral_radius_threshold(kappa, eps)
    cfac = contraction_factor(eps)
    m_mats = {}
    k_mats = {}
    for s in subsystem.modes:
        dyn = subsystem.dynamics(s)
        k = np.asarray(k_gains[s], dtype=float)
        if k.shape != (subsystem.m, subsystem.n):
            raise ValidationError(
                f"subsystem {subsystem.index} mode {s}: K shape {k.shape}, "
                f"expected {(subsystem.m, subsystem.n)}")
        acl = dyn.a + dyn.b @ k
        rho = float(np.max(np.abs(np.linalg.eigvals(acl))))
        if rho >= thresh:
            raise SpectralRadiusTooLarge(rho, thresh,
                                         where=f"subsystem {subsystem.index} mode {s}")
        dlt = default_delta(dyn.c) if delta is None else float(delta)
        if dlt <= 0:
            raise ValidationError(f"delta must be positive, got {dlt}")
        atil = np.sqrt(cfac / kappa) * acl
        rhs = (dyn.c.T @ dyn.c + dlt * np.eye(subsystem.n)) / kappa
        m = sla.solve_discrete_lyapunov(atil.T, rhs)
        m = 0.5 * (m + m.T)
        resid = np.linalg.norm(atil.T @ m @ atil - m + rhs)
        if resid > 1e-8 * (1.0 + np.linalg.norm(rhs)) * max(1.0, np.linalg.norm(m)):
            raise NumericalFailure(
                f"subsystem {subsystem.index} mode {s}: Lyapunov residual {resid:.3e}")
        m_mats[s] = m
        k_mats[s] = k
    return LocalCertificate(m=m_mats, k=k_mats, kappa=float(kappa), eps=float(eps))


@dataclass
class Cond22Report:
    """Eigenvalue margins of the two certificate inequalities for one mode."""

    margin_output: float        # min eig of M - C'C
    margin_contraction: float   # min eig of kappa M - c (A+BK)' M (A+BK)
    tol_output: float
    tol_contraction: float

    @property
    def valid(self):
        return (self.margin_output >= -self.tol_output
                and self.margin_contraction >= -self.tol_contraction)


def verify_cond22(m, a, b, c, k, kappa, eps):
    """Report-only check of the output floor and contraction inequalities."""
    m = np.asarray(m, float)
    m = 0.5 * (m + m.T)
    acl = np.asarray(a, float) + np.asarray(b, float) @ np.asarray(k, float)
    cfac = contraction_factor(eps)
    g1 = m - np.asarray(c, float).T @ np.asarray(c, float)
    g2 = kappa * m - cfac * acl.T @ m @ acl
    return Cond22Report(
        margin_output=float(np.linalg.eigvalsh(g1).min()),
        margin_contraction=float(np.linalg.eigvalsh(g2).min()),
        tol_output=PSD_RTOL * max(1.0, np.linalg.norm(m, 2)),
        tol_contraction=PSD_RTOL * max(1.0, np.linalg.norm(g2, 2) + np.linalg.norm(m, 2)),
    )


def verify_certificate(subsystem, cert: LocalCertificate):
    """verify_cond22 across all modes; returns mode -> Cond22Report."""
    out = {}
    for s in subsystem.modes:
        dyn = subsystem.dynamics(s)
        out[s] = verify_cond22(cert.m[s], dyn.a, dyn.b, dyn.c, cert.k[s],
                               cert.kappa, cert.eps)
    return out


@dataclass
class TauResult:
    tau: float
    exact: bool    # generalized-eigenvalue path (equal P); else conservative bound


def compute_tau(m_mats, p_mats=None) -> TauResult:
    """Mode-comparison constant: V_s <= tau V_s' for all ordered mode pairs.

    With a mode-independent projection the comparison reduces to the matrix
    inequality M_s <= tau M_s', solved exactly by generalized eigenvalues.
    With mode-dependent P the quadratic forms have different centers and only
    the conservative bound max_s lam_max(M_s) / min_s lam_min(M_s) is returned,
    flagged accordingly.
    """
    modes = sorted(m_mats)
    if not modes:
        raise ValidationError("no modes")
    mats = [0.5 * (np.asarray(m_mats[s], float) + np.asarray(m_mats[s], float).T) for s in modes]
    for s, m in zip(modes, mats):
        if np.linalg.eigvalsh(m).min() <= 0:
            raise NumericalFailure(f"mode {s}: M not positive definite")
    if len(modes) == 1:
        return TauResult(1.0, True)

    equal_p = True
    if p_mats is not None:
        ps = [np.asarray(p_mats[s], float) for s in modes]
        equal_p = all(p.shape == ps[0].shape and np.allclose(p, ps[0], rtol=0, atol=1e-12)
                      for p in ps[1:])
    if equal_p:
        tau = 1.0
        for i, mi in enumerate(mats):
            for j, mj in enumerate(mats):
                if i == j:
                    continue
                tau = max(tau, float(sla.eigh(mi, mj, eigvals_only=True).max()))
        return TauResult(tau, True)

    lmax = max(float(np.linalg.eigvalsh(m).max()) for m in mats)
    lmin = min(float(np.linalg.eigvalsh(m).min()) for m in mats)
    return TauResult(max(1.0, lmax / lmin), False)


def compute_gain_scalars(cert: LocalCertificate, d_mats, b_mats, p_mats, bhat_mats,
                         r_mats) -> LocalCertificate:
    """Dissipation scalars: lam = 1 - tau*kappa and the two channel gains.

    rho_int = tau (1+eps+1/eps) max_s |sqrt(M_s) D_s|^2
    rho_ext = tau (1+eps+1/eps) max_s |sqrt(M_s)(B_s R_s - P_s Bhat_s)|^2

    both with the spectral norm squared. Raises CertificateInfeasible when
    tau*kappa >= 1, in which case no positive decay rate exists.
    """
    if cert.tau * cert.kappa >= 1.0:
        raise CertificateInfeasible(
            f"tau*kappa = {cert.tau * cert.kappa:.6g} >= 1 (tau={cert.tau:.6g}, "
            f"kappa={cert.kappa:.6g})")
    cfac = contraction_factor(cert.eps)
    rho_int = 0.0
    rho_ext = 0.0
    for s in cert.modes:
        sq = sym_sqrt(cert.m[s])
        rho_int = max(rho_int, float(np.linalg.norm(sq @ np.asarray(d_mats[s], float), 2) ** 2))
        mism = np.asarray(b_mats[s], float) @ np.asarray(r_mats[s], float) \
            - np.asarray(p_mats[s], float) @ np.asarray(bhat_mats[s], float)
        rho_ext = max(rho_ext, float(np.linalg.norm(sq @ mism, 2) ** 2))
    return replace(cert,
                   lam=1.0 - cert.tau * cert.kappa,
                   rho_int=cert.tau * cfac * rho_int,
                   rho_ext=cert.tau * cfac * rho_ext)


def normalize_output_scale(certs, c_mats_per_sub):
    """Rescale all certificate matrices by one common factor.

    The factor makes the tightest mode/subsystem touch the output floor
    M >= C'C with equality in one direction (alpha stays 1 with no slack).
    A common scale leaves tau, lam and dissipation validity unchanged and
    shrinks rho_int/rho_ext; see the scaling law of quadratic certificates.

    `certs` is a list of LocalCertificate, `c_mats_per_sub` a parallel list of
    mode -> C dictionaries. Returns new certificates and the factor used.
    """
    alpha_max = np.inf
    for cert, c_mats in zip(certs, c_mats_per_sub):
        for s in cert.modes:
            c = np.asarray(c_mats[s], float)
            lam = float(sla.eigh(c.T @ c, cert.m[s], eigvals_only=True).max())
            if lam > 0:
                alpha_max = min(alpha_max, 1.0 / lam)
    if not np.isfinite(alpha_max):
        return list(certs), 1.0
    scale = 1.0 / alpha_max
    out = []
    for cert in certs:
        out.append(replace(cert, m={s: scale * cert.m[s] for s in cert.modes}))
    return out, scale


@dataclass
class DissipationReport:
    """Outcome of sampled verification of the local dissipation inequality."""

    samples: int
    violations: int
    worst_slack: float          # min over samples of RHS - LHS; >= -tol means pass
    worst_sample: Optional[dict] = None
    tol: float = 1e-8

    @property
    def passed(self):
        return self.violations == 0


def verify_local_dissipation_sampled(cert: LocalCertificate, concrete, abstract,
                                     interface, n_samples=1000, seed=0, tol=1e-8,
                                     scale=1.0):
    """Sample the one-step dissipation inequality of the certified pair.

    Draws (x, xhat, uhat, w, what, s, s') tuples, refines u through the
    interface, steps both subsystems once and checks

        V_s'(x+, xhat+) - V_s <= -lam V_s + rho_ext |uhat|^2 + rho_int |w - what|^2

    Report-only: returns counts and the most violating sample. When the
    concrete subsystem has an exogenous channel, a shared disturbance d is
    drawn as well; matched channels must leave the inequality untouched.
    """
    if cert.lam is None or cert.rho_int is None or cert.rho_ext is None:
        raise ValidationError("certificate gains not computed; run compute_gain_scalars first")
    rng = np.random.default_rng(seed)
    n, w_dim, m_dim = concrete.n, concrete.w, concrete.m
    nhat = abstract.nhat
    mhat = abstract.mhat
    what_dim = abstract.what_dim

    modes = list(concrete.modes)
    s_draw = rng.integers(0, len(modes), size=n_samples)
    sp_draw = rng.integers(0, len(modes), size=n_samples)

    x = rng.normal(0.0, scale, (n_samples, n))
    xh = rng.normal(0.0, scale, (n_samples, nhat))
    uh = rng.normal(0.0, scale, (n_samples, mhat))
    w = rng.normal(0.0, scale, (n_samples, w_dim))
    wh = rng.normal(0.0, scale, (n_samples, what_dim))
    d = None
    if concrete.d_dim:
        d = rng.normal(0.0, scale, (n_samples, concrete.d_dim))

    slack = np.empty(n_samples)
    for si, s in enumerate(modes):
        for spi, sp in enumerate(modes):
            mask = (s_draw == si) & (sp_draw == spi)
            if not np.any(mask):
                continue
            dyn = concrete.dynamics(s)
            xs, xhs, uhs, ws, whs = x[mask], xh[mask], uh[mask], w[mask], wh[mask]
            us = interface.batch(xs, xhs, uhs, whs, s)
            if d is not None:
                us = us + d[mask] @ interface.t_exo(s).T
            xp = xs @ dyn.a.T + ws @ dyn.d.T + us @ dyn.b.T
            ahat, bhat, dhat = abstract.a(s), abstract.b(s), abstract.d(s)
            xhp = xhs @ ahat.T + whs @ dhat.T + uhs @ bhat.T
            if d is not None:
                xp = xp + d[mask] @ dyn.h.T
                xhp = xhp + d[mask] @ abstract.h(s).T
            e0 = xs - xhs @ cert.p[s].T
            e1 = xp - xhp @ cert.p[sp].T
            v0 = np.einsum("ni,ij,nj->n", e0, cert.m[s], e0)
            v1 = np.einsum("ni,ij,nj->n", e1, cert.m[sp], e1)
            rhs = (1.0 - cert.lam) * v0 \
                + cert.rho_ext * np.sum(uhs ** 2, axis=1) \
                + cert.rho_int * np.sum((ws - whs) ** 2, axis=1)
            slack[mask] = rhs - v1

    # tolerance scales with the size of the quadratic forms involved
    level = max(1.0, float(np.max(np.abs(slack))))
    bad = slack < -tol * level
    worst = int(np.argmin(slack))
    report = DissipationReport(
        samples=n_samples,
        violations=int(np.count_nonzero(bad)),
        worst_slack=float(slack[worst]),
        worst_sample={"index": worst, "mode": modes[s_draw[worst]],
                      "next_mode": modes[sp_draw[worst]]},
        tol=tol * level,
    )
    return report
