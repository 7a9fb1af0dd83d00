"""Intrinsic Fisher-Rao geometry: metric, Levi-Civita connection, curvature.

Index conventions (all arrays are dense numpy):

* ``dg[k, i, j]``      = d_k g_ij
* ``Gamma[k, i, j]``   = Gamma^k_ij (second kind)
* ``Gamma_low[i, j, k]`` = g_km Gamma^m_ij
* ``Riem[i, j, k, l]`` = g_im R^m_jkl with
  R^m_jkl = d_k Gamma^m_lj - d_l Gamma^m_kj + Gamma^m_kr Gamma^r_lj - Gamma^m_lr Gamma^r_kj
* ``Rsharp[i, j]``     = g^kl R_ikjl
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularFisher
from .expectation import ExpectationEngine, MomentTable, default_engine, metric_derivative, moment_table
from .models import ParametricModel

PD_TOL = 1e-10
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class MetricInfo:
    g: np.ndarray
    g_inv: np.ndarray
    eigvals: np.ndarray

    @property
    def min_eig(self) -> float:
        return float(self.eigvals[0])


def metric(table: MomentTable, pd_tol: float = PD_TOL) -> MetricInfo:
    """Fisher metric from a moment table; raises SingularFisher unless g > pd_tol * max eig."""
    g = np.asarray(table.g, dtype=float)
    eig = np.linalg.eigvalsh(g)
    if eig[0] <= pd_tol * max(float(eig[-1]), 0.0) or eig[-1] <= 0.0:
        raise SingularFisher(float(eig[0]))
    g_inv = np.linalg.inv(g)
    g_inv = 0.5 * (g_inv + g_inv.T)
    return MetricInfo(g=g, g_inv=g_inv, eigvals=eig)


def christoffel_from_table(table: MomentTable, pd_tol: float = PD_TOL):
    """Return ``(Gamma, Gamma_low, dg)`` using d_k g_ij = Ge_ikj + Ge_jki + T_ijk."""
    info = metric(table, pd_tol)
    dg = metric_derivative(table)
    # Gamma_{ij,k} = 1/2 (d_i g_jk + d_j g_ik - d_k g_ij)
    low = 0.5 * (np.einsum("ijk->ijk", dg) + np.einsum("jik->ijk", dg) - np.einsum("kij->ijk", dg))
    low = 0.5 * (low + np.swapaxes(low, 0, 1))
    gamma = np.einsum("km,ijm->kij", info.g_inv, low)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, 1, 2))
    return gamma, low, dg


def christoffel(model: ParametricModel, theta, engine: ExpectationEngine | None = None):
    """Christoffel symbols (second and first kind) at ``theta``."""
    gamma, low, _ = christoffel_from_table(moment_table(model, theta, engine))
    return gamma, low


def fd_step(theta) -> float:
    return max(1.0, float(np.linalg.norm(theta))) * _EPS ** (1.0 / 3.0)


def _gamma_derivative(model, theta, engine, h):
    """dGamma[k, m, i, j] = d_k Gamma^m_ij by central differences with one Richardson level."""
    d = model.dim
    out = np.zeros((d,) * 4)
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0

        def gam(point):
            if not model.regular_domain(point):
                raise DomainError(f"finite-difference point {point.tolist()} leaves the regular domain")
            return christoffel_from_table(moment_table(model, point, engine))[0]

        def cd(step):
            return (gam(theta + step * e) - gam(theta - step * e)) / (2.0 * step)

        out[k] = (4.0 * cd(h / 2.0) - cd(h)) / 3.0
    return out


def riemann_from_parts(g: np.ndarray, gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    up = (np.einsum("kmlj->mjkl", dgamma) - np.einsum("lmkj->mjkl", dgamma)
          + np.einsum("mkr,rlj->mjkl", gamma, gamma) - np.einsum("mlr,rkj->mjkl", gamma, gamma))
    return np.einsum("im,mjkl->ijkl", g, up)


def ricci_contraction(riem: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("kl,ikjl->ij", g_inv, riem)


def riemann(model: ParametricModel, theta, engine: ExpectationEngine | None = None,
            step: float | None = None):
    """Riemann (0,4) tensor and its Ricci-type contraction in model coordinates."""
    snap = geometry_snapshot(model, theta, engine, step)
    return snap.Riem, snap.Rsharp


def riemann_symmetry_residuals(R: np.ndarray) -> dict[str, float]:
    def mx(a):
        return float(np.max(np.abs(a), initial=0.0))

    return {
        "antisym_kl": mx(R + np.einsum("ijkl->ijlk", R)),
        "antisym_ij": mx(R + np.einsum("ijkl->jikl", R)),
        "pair_swap": mx(R - np.einsum("ijkl->klij", R)),
        "bianchi": mx(R + np.einsum("iklj->ijkl", R) + np.einsum("iljk->ijkl", R)),
    }


@dataclass(frozen=True)
class GeometrySnapshot:
    theta: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    dg: np.ndarray
    Gamma: np.ndarray
    Gamma_low: np.ndarray
    Riem: np.ndarray
    Rsharp: np.ndarray
    min_eig_g: float
    step: float

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def symmetry_residuals(self) -> dict[str, float]:
        res = riemann_symmetry_residuals(self.Riem)
        res["rsharp_asym"] = float(np.max(np.abs(self.Rsharp - self.Rsharp.T)))
        res["inverse"] = float(np.max(np.abs(self.g_inv @ self.g - np.eye(self.dim))))
        return res

    def to_dict(self) -> dict:
        flat = lambda a: np.asarray(a, dtype=float).ravel(order="C").tolist()  # noqa: E731
        return {
            "dim": self.dim,
            "theta": flat(self.theta),
            "g": flat(self.g),
            "g_inv": flat(self.g_inv),
            "dg": flat(self.dg),
            "Gamma": flat(self.Gamma),
            "Gamma_low": flat(self.Gamma_low),
            "Riem": flat(self.Riem),
            "Rsharp": flat(self.Rsharp),
            "min_eig_g": self.min_eig_g,
            "fd_step": self.step,
            "symmetry_residuals": self.symmetry_residuals(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def geometry_snapshot(model: ParametricModel, theta, engine: ExpectationEngine | None = None,
                      step: float | None = None, table: MomentTable | None = None) -> GeometrySnapshot:
    theta = np.asarray(theta, dtype=float).reshape(model.dim)
    engine = engine or default_engine(model)
    table = table if table is not None else moment_table(model, theta, engine)
    info = metric(table)
    gamma, low, dg = christoffel_from_table(table)
    h = fd_step(theta) if step is None else step
    dgamma = _gamma_derivative(model, theta, engine, h)
    riem = riemann_from_parts(info.g, gamma, dgamma)
    rsharp = ricci_contraction(riem, info.g_inv)
    return GeometrySnapshot(theta=theta, g=info.g, g_inv=info.g_inv, dg=dg, Gamma=gamma,
                            Gamma_low=low, Riem=riem, Rsharp=rsharp, min_eig_g=info.min_eig, step=h)


def covariant_hessian(U2, U1, Gamma) -> np.ndarray:
    """(nabla^2 l)_ij = U_ij - Gamma^k_ij U_k."""
    U2 = np.asarray(U2, dtype=float)
    U1 = np.asarray(U1, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    if U2.shape != (U1.shape[-1],) * 2 or Gamma.shape != (U1.shape[-1],) * 3:
        raise ValueError("shape mismatch between Hessian, score and connection")
    return U2 - np.einsum("kij,k->ij", Gamma, U1)
