"""Extrinsic geometry of the square-root density immersion theta -> sqrt(p_theta).

Nothing here touches function space: with e_i = d_i psi = 1/2 s_i psi and
e_ij = (1/2 s_ij + 1/4 s_i s_j) psi, every ambient inner product is a
linear combination of score moments, so the whole report is algebra on a
:class:`~fisherrao.expectation.MomentTable`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .expectation import MomentTable
from .geometry import metric


@dataclass(frozen=True)
class AmbientGrams:
    GramE: np.ndarray     # <e_i, e_j>
    GramMix: np.ndarray   # <e_ij, e_k>
    GramH: np.ndarray     # <e_ij, e_kl>
    radial: np.ndarray    # <e_ij, psi>


def ambient_grams(table: MomentTable) -> AmbientGrams:
    M = table.M
    return AmbientGrams(
        GramE=0.25 * table.g,
        GramMix=0.25 * table.Ge + 0.125 * table.T,
        GramH=(0.25 * table.Q + 0.125 * M + 0.125 * np.einsum("klij->ijkl", M) + table.F / 16.0),
        radial=0.5 * table.hess_mean + 0.25 * table.g,
    )


def sff_gram(grams: AmbientGrams, g_inv: np.ndarray) -> np.ndarray:
    """<II_ij, II_kl>: remove the tangential part of e_ij using <e_a, e_b>^-1 = 4 g^ab."""
    mix = grams.GramMix
    tangential = 4.0 * np.einsum("ab,ija,klb->ijkl", g_inv, mix, mix)
    return grams.GramH - tangential


def s_sharp(gram_ii: np.ndarray, g_inv: np.ndarray) -> tuple[np.ndarray, float]:
    """S#_ij = g^kl <II_ik, II_jl> and kappa^2 = g^ik g^jl <II_ij, II_kl>."""
    ss = np.einsum("kl,ikjl->ij", g_inv, gram_ii)
    ss = 0.5 * (ss + ss.T)
    kappa_sq = float(np.einsum("ik,jl,ijkl->", g_inv, g_inv, gram_ii))
    return ss, kappa_sq


def gauss_residual(riem: np.ndarray, gram_ii: np.ndarray) -> np.ndarray:
    """R_ijkl - 4 (<II_ik, II_jl> - <II_il, II_jk>)."""
    return riem - 4.0 * (np.einsum("ikjl->ijkl", gram_ii) - np.einsum("iljk->ijkl", gram_ii))


def pair_matrix(t4: np.ndarray) -> np.ndarray:
    """Quadratic form of a pair-symmetric 4-tensor on the symmetric-pair basis.

    Off-diagonal pairs are weighted by sqrt(2) so the map from symmetric d x d
    matrices to R^{d(d+1)/2} is an isometry.
    """
    d = t4.shape[0]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    wt = np.array([1.0 if i == j else np.sqrt(2.0) for i, j in pairs])
    out = np.empty((len(pairs), len(pairs)))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            out[a, b] = t4[i, j, k, l]
    return out * np.outer(wt, wt)


def efron_curvature(table: MomentTable) -> float:
    """Efron's one-parameter statistical curvature gamma^2 = (nu20 nu02 - nu11^2) / nu20^3."""
    if table.dim != 1:
        raise ValueError("Efron curvature is defined for one-parameter models")
    nu20 = float(table.g[0, 0])
    nu11 = float(table.Ge[0, 0, 0])
    nu02 = float(table.Q[0, 0, 0, 0] - table.hess_mean[0, 0] ** 2)
    return (nu20 * nu02 - nu11**2) / nu20**3


@dataclass(frozen=True)
class ImmersionReport:
    theta: np.ndarray
    GramE: np.ndarray
    GramMix: np.ndarray
    GramH: np.ndarray
    GramII: np.ndarray
    Ssharp: np.ndarray
    kappa_sq: float
    radial: np.ndarray
    gauss_residual: np.ndarray | None = None
    efron_gamma_sq: float | None = None

    @property
    def gram_ii_min_eig(self) -> float:
        return float(np.linalg.eigvalsh(pair_matrix(self.GramII))[0])

    @property
    def ssharp_min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.Ssharp)[0])

    def to_dict(self) -> dict:
        flat = lambda a: np.asarray(a, dtype=float).ravel(order="C").tolist()  # noqa: E731
        out = {
            "dim": int(self.GramE.shape[0]),
            "theta": flat(self.theta),
            "GramE": flat(self.GramE),
            "GramMix": flat(self.GramMix),
            "GramH": flat(self.GramH),
            "GramII": flat(self.GramII),
            "Ssharp": flat(self.Ssharp),
            "kappa_sq": self.kappa_sq,
            "radial": flat(self.radial),
            "gram_ii_min_eig": self.gram_ii_min_eig,
        }
        if self.gauss_residual is not None:
            out["gauss_residual"] = flat(self.gauss_residual)
            out["gauss_residual_max"] = float(np.max(np.abs(self.gauss_residual)))
        if self.efron_gamma_sq is not None:
            out["efron_gamma_sq"] = self.efron_gamma_sq
            out["kappa_sq_over_efron"] = self.kappa_sq / self.efron_gamma_sq if self.efron_gamma_sq else None
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def immersion_report(table: MomentTable, riem: np.ndarray | None = None) -> ImmersionReport:
    info = metric(table)
    grams = ambient_grams(table)
    gii = sff_gram(grams, info.g_inv)
    ss, k2 = s_sharp(gii, info.g_inv)
    return ImmersionReport(
        theta=np.asarray(table.theta),
        GramE=grams.GramE,
        GramMix=grams.GramMix,
        GramH=grams.GramH,
        GramII=gii,
        Ssharp=ss,
        kappa_sq=k2,
        radial=grams.radial,
        gauss_residual=None if riem is None else gauss_residual(riem, gii),
        efron_gamma_sq=efron_curvature(table) if table.dim == 1 else None,
    )
