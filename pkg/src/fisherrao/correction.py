"""Second-order covariance correction tensor P and its decomposition.

P is evaluated in a Gamma-killing normal chart at theta0 and carried back to
model coordinates as a (0,2)-tensor.  The chart is
``theta(u) = theta0 + A u + 1/2 Hq[u, u]`` with ``A = g^{-1/2}`` and
``Hq^i_ab = -Gamma^i_jk A^j_a A^k_b``; moments in chart coordinates come from
the base table by the exact chain rule, never by re-integration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._tensor import pair_swap_symmetrize, symmetrize
from .errors import SingularFisher, TangencyViolation
from .expectation import ExpectationEngine, MomentTable, default_engine, moment_table
from .geometry import PD_TOL, GeometrySnapshot, geometry_snapshot
from .immersion import ImmersionReport, immersion_report
from .models import ParametricModel, QuadraticReparam


@dataclass(frozen=True)
class NormalChart:
    theta0: np.ndarray
    A: np.ndarray    # A[i, a] = A^i_a, with A^T g A = I
    Hq: np.ndarray   # Hq[i, a, b]

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.theta0 + u @ self.A.T + 0.5 * np.einsum("iab,...a,...b->...i", self.Hq, u, u)

    def as_model(self, model: ParametricModel) -> QuadraticReparam:
        """The model expressed in chart coordinates (for finite-difference checks)."""
        return QuadraticReparam(model, self.theta0, self.A, self.Hq)

    def to_dict(self) -> dict:
        return {"theta0": self.theta0.tolist(), "A": self.A.ravel().tolist(), "Hq": self.Hq.ravel().tolist()}


def _inv_sqrt(g: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(g)
    if w[0] <= PD_TOL * max(float(w[-1]), 0.0) or w[-1] <= 0.0:
        raise SingularFisher(float(w[0]))
    out = (v / np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


def build_normal_chart(snapshot: GeometrySnapshot, rotation: np.ndarray | None = None) -> NormalChart:
    """Normal chart at the snapshot's base point.

    ``rotation`` (orthogonal) selects a different whitening ``A = g^{-1/2} O``;
    the default is the symmetric inverse square root.
    """
    A = _inv_sqrt(snapshot.g)
    if rotation is not None:
        A = A @ np.asarray(rotation, dtype=float)
    Hq = -np.einsum("ijk,ja,kb->iab", snapshot.Gamma, A, A)
    Hq = 0.5 * (Hq + np.swapaxes(Hq, 1, 2))
    return NormalChart(theta0=np.asarray(snapshot.theta, dtype=float), A=A, Hq=Hq)


def pushforward_moments(table: MomentTable, chart: NormalChart) -> MomentTable:
    """Moments of the chart-coordinate scores at u = 0.

    s'_a = J s, s'_ab = JJ s2 + H s1, s'_abc = JJJ s3 + (HJ over the three pair splits) s2
    with J = A and H = Hq.
    """
    J, H = chart.A, chart.Hq
    g, T, Ge, kap, Q, M, F = table.g, table.T, table.Ge, table.kappa, table.Q, table.M, table.F
    hm = table.hess_mean if table.hess_mean is not None else -g
    sm = table.score_mean if table.score_mean is not None else np.zeros(chart.dim)

    g2 = np.einsum("ij,ia,jb->ab", g, J, J)
    T2 = np.einsum("ijk,ia,jb,kc->abc", T, J, J, J)
    Ge2 = np.einsum("ijk,ia,jb,kc->abc", Ge, J, J, J) + np.einsum("iab,ij,jc->abc", H, g, J)
    hj = np.einsum("iab,ij,jc->abc", H, hm, J)
    kap2 = (np.einsum("ijk,ia,jb,kc->abc", kap, J, J, J)
            + hj + np.einsum("acb->abc", hj) + np.einsum("bca->abc", hj))
    cross = np.einsum("ijk,ia,jb,kcd->abcd", Ge, J, J, H)
    Q2 = (np.einsum("ijkl,ia,jb,kc,ld->abcd", Q, J, J, J, J) + cross + np.einsum("cdab->abcd", cross)
          + np.einsum("iab,ij,jcd->abcd", H, g, H))
    M2 = (np.einsum("ijkl,ia,jb,kc,ld->abcd", M, J, J, J, J)
          + np.einsum("iab,ijk,jc,kd->abcd", H, T, J, J))
    F2 = np.einsum("ijkl,ia,jb,kc,ld->abcd", F, J, J, J, J)
    hm2 = np.einsum("ij,ia,jb->ab", hm, J, J) + np.einsum("iab,i->ab", H, sm)
    sm2 = J.T @ sm

    scale = max(1.0, float(np.max(np.abs(J))), float(np.max(np.abs(H)))) ** 4
    return MomentTable(
        theta=np.zeros(chart.dim), g=symmetrize(g2), T=symmetrize(T2), Ge=symmetrize(Ge2, [(0, 1)]),
        kappa=symmetrize(kap2), Q=pair_swap_symmetrize(Q2), M=symmetrize(M2, [(0, 1), (2, 3)]),
        F=symmetrize(F2), err=table.err * scale, score_mean=sm2, hess_mean=symmetrize(hm2),
        mass=table.mass,
    )


def _raise_last(Ge: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """Gu[m, i, k] = Gamma^(e)m_ik = g^mn Ge_ikn."""
    return np.einsum("mn,ikn->mik", g_inv, Ge)


def p_tensor_full(mt: MomentTable) -> np.ndarray:
    """P from score moments, every index raised with the table's own inverse metric."""
    g = mt.g
    gi = np.linalg.inv(g)
    gi = 0.5 * (gi + gi.T)
    Gu = _raise_last(mt.Ge, gi)
    kap = mt.kappa

    t_cov = np.einsum("km,ikjm->ij", gi, mt.Q) - np.einsum("km,ik,jm->ij", gi, g, g)
    t_ee = np.einsum("mik,kjm->ij", Gu, Gu)
    tr = np.einsum("kik->i", Gu)
    t_tr = np.outer(tr, tr)
    t_kk = 0.25 * (
        np.einsum("ikl,jrs,kl,rs->ij", kap, kap, gi, gi)
        + np.einsum("ikl,jrs,kr,ls->ij", kap, kap, gi, gi)
        + np.einsum("ikl,jrs,ks,lr->ij", kap, kap, gi, gi)
    )
    t_ke = 0.5 * (
        np.einsum("jrs,kik,rs->ij", kap, Gu, gi)
        + np.einsum("jrs,rik,ks->ij", kap, Gu, gi)
        + np.einsum("jrs,sik,kr->ij", kap, Gu, gi)
    )
    t_ek = 0.5 * (
        np.einsum("ikl,mjm,kl->ij", kap, Gu, gi)
        + np.einsum("ikl,kjm,ml->ij", kap, Gu, gi)
        + np.einsum("ikl,ljm,mk->ij", kap, Gu, gi)
    )
    P = t_cov + t_ee + t_tr + t_kk + t_ke + t_ek
    return 0.5 * (P + P.T)


def tangency_residuals(mt: MomentTable) -> dict[str, float]:
    d = mt.dim
    return {
        "metric_identity": float(np.max(np.abs(mt.g - np.eye(d)))),
        "ge_plus_half_t": float(np.max(np.abs(mt.Ge + 0.5 * mt.T))),
        "kappa_minus_half_t": float(np.max(np.abs(mt.kappa - 0.5 * mt.T))),
    }


def p_tensor_reduced(mt: MomentTable, tol: float = 1e-6) -> np.ndarray:
    """P_ij = sum_k E[s_ik s_jk] - d_ij - 1/2 k_ikl k_jkl + 1/4 k_irr k_jss.

    Valid only in a normal chart; raises TangencyViolation when the chart's
    defining identities fail beyond ``tol`` (scaled by the moment size).
    """
    res = tangency_residuals(mt)
    scale = max(1.0, float(np.max(np.abs(mt.T))))
    bad = {k: v for k, v in res.items() if v > tol * scale}
    if bad:
        raise TangencyViolation(f"normal-chart identities violated: {bad}")
    kap = mt.kappa
    tr = np.einsum("irr->i", kap)
    P = (np.einsum("ikjk->ij", mt.Q) - np.eye(mt.dim) - 0.5 * np.einsum("ikl,jkl->ij", kap, kap)
         + 0.25 * np.outer(tr, tr))
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class CorrectionReport:
    theta0: np.ndarray
    chart: NormalChart
    moments_nc: MomentTable
    moments: MomentTable
    fisher: np.ndarray
    P_nc: np.ndarray
    P_user: np.ndarray
    Rsharp_user: np.ndarray
    Ssharp_user: np.ndarray
    D_user: np.ndarray
    consistency: dict = field(default_factory=dict)
    geometry: GeometrySnapshot | None = None
    immersion: ImmersionReport | None = None

    def predict_cov(self, n: int) -> np.ndarray:
        return predict_covariance(self, self.fisher, n)

    def eigen_table(self) -> dict[str, np.ndarray]:
        return {
            "P": np.linalg.eigvalsh(self.P_user),
            "half_Rsharp": np.linalg.eigvalsh(0.5 * self.Rsharp_user),
            "Ssharp": np.linalg.eigvalsh(self.Ssharp_user),
            "D": np.linalg.eigvalsh(self.D_user),
        }

    def to_dict(self) -> dict:
        flat = lambda a: np.asarray(a, dtype=float).ravel(order="C").tolist()  # noqa: E731
        out = {
            "dim": int(self.P_user.shape[0]),
            "theta": flat(self.theta0),
            "chart": self.chart.to_dict(),
            "moments_nc": self.moments_nc.to_dict(),
            "fisher": flat(self.fisher),
            "P_nc": flat(self.P_nc),
            "P_user": flat(self.P_user),
            "half_Rsharp_user": flat(0.5 * self.Rsharp_user),
            "Rsharp_user": flat(self.Rsharp_user),
            "Ssharp_user": flat(self.Ssharp_user),
            "D_user": flat(self.D_user),
            "D_definition": "D = P - Rsharp/2 - Ssharp (defined by subtraction)",
            "consistency": self.consistency,
            "eigenvalues": {k: flat(v) for k, v in self.eigen_table().items()},
        }
        if self.geometry is not None:
            out["geometry"] = self.geometry.to_dict()
        if self.immersion is not None:
            out["immersion"] = self.immersion.to_dict()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def decompose(P_nc: np.ndarray, chart: NormalChart, Rsharp_user: np.ndarray, Ssharp_user: np.ndarray,
              *, moments_nc: MomentTable, moments: MomentTable, fisher: np.ndarray,
              consistency: dict | None = None, geometry: GeometrySnapshot | None = None,
              immersion: ImmersionReport | None = None) -> CorrectionReport:
    a_inv = np.linalg.inv(chart.A)
    P_user = a_inv.T @ P_nc @ a_inv
    P_user = 0.5 * (P_user + P_user.T)
    D_user = P_user - 0.5 * Rsharp_user - Ssharp_user
    return CorrectionReport(theta0=chart.theta0, chart=chart, moments_nc=moments_nc, moments=moments,
                            fisher=fisher,
                            P_nc=P_nc, P_user=P_user, Rsharp_user=Rsharp_user, Ssharp_user=Ssharp_user,
                            D_user=D_user, consistency=consistency or {}, geometry=geometry,
                            immersion=immersion)


def correction_report(model: ParametricModel, theta, engine: ExpectationEngine | None = None,
                      rotation: np.ndarray | None = None) -> CorrectionReport:
    """Full pipeline at one parameter point."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    engine = engine or default_engine(model)
    table = moment_table(model, theta, engine)
    snap = geometry_snapshot(model, theta, engine, table=table)
    return report_from_parts(table, snap, immersion_report(table, snap.Riem), rotation)


def report_from_parts(table: MomentTable, snap: GeometrySnapshot, imm: ImmersionReport,
                      rotation: np.ndarray | None = None) -> CorrectionReport:
    """Chart, transported moments, P and its decomposition from precomputed pieces."""
    chart = build_normal_chart(snap, rotation)
    mt = pushforward_moments(table, chart)
    P_full = p_tensor_full(mt)
    consistency = {"tangency_residuals": tangency_residuals(mt)}
    try:
        P_red = p_tensor_reduced(mt)
        consistency["full_vs_reduced"] = float(np.max(np.abs(P_full - P_red)))
    except TangencyViolation as exc:
        consistency["full_vs_reduced"] = None
        consistency["tangency_error"] = str(exc)
    return decompose(P_full, chart, snap.Rsharp, imm.Ssharp, moments_nc=mt, moments=table, fisher=table.g,
                     consistency=consistency, geometry=snap, immersion=imm)


def predict_covariance(report: CorrectionReport, fisher: np.ndarray, n: int) -> np.ndarray:
    """I^-1 / n + I^-1 P I^-1 / n^2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    inv = np.linalg.inv(np.asarray(fisher, dtype=float))
    inv = 0.5 * (inv + inv.T)
    cov = inv / n + inv @ report.P_user @ inv / n**2
    return 0.5 * (cov + cov.T)
