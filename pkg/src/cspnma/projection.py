"""Projection core: constrained GLS as an explicit linear map of the observations.

The raw information ``I = X~' V~+ X~`` lives on all ``m`` pairwise coordinates,
but the estimate must satisfy the consistency constraints. Writing consistent
contrast vectors as ``theta = G phi`` (``G`` the node-to-contrast incidence),
the information restricted to the consistency subspace is the weighted graph
Laplacian ``L = G' I G`` and its pseudoinverse on that subspace is
``G L+ G'``. This is the operator used for ``u = I+ c_ab``, for
``P = I+ X~' V~+`` and for the effective-resistance variance ``c' I+ c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInformation, UnknownContrast
from .linalg import BlockDiag, RankInfo, blockdiag_pinv, blockdiag_rank, pseudoinverse
from .model import (
    ContrastId,
    ContrastSystem,
    HeterogeneitySpec,
    TreatmentNetwork,
    assemble_system,
    incidence,
)
from .tolerances import PINV_RTOL


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    info: np.ndarray  # X~' V~+ X~ on all m coordinates
    laplacian: np.ndarray  # G' info G, T x T
    info_pinv: np.ndarray  # G L+ G', pseudoinverse of info on the consistency subspace
    v_pinv: BlockDiag
    rank_v: RankInfo
    rank_laplacian: RankInfo

    def potential(self, sys: ContrastSystem, target) -> np.ndarray:
        col, sign = orient(sys, target)
        return sign * self.info_pinv[:, col]

    def row(self, sys: ContrastSystem, target) -> np.ndarray:
        """Coefficients ``p_ab`` with ``theta_ab = p_ab' y~``."""
        return self.v_pinv.apply(sys.X_apply(self.potential(sys, target)))

    def matrix(self, sys: ContrastSystem) -> np.ndarray:
        """The full ``m x n`` mapping ``P``."""
        return (self.v_pinv.apply(sys.X_tilde @ self.info_pinv)).T


@dataclass(frozen=True, eq=False)
class NmaFit:
    theta_hat: np.ndarray
    cov_theta: np.ndarray
    fitted: np.ndarray
    residual: np.ndarray
    tau2: float = 0.0
    mode: str = "fixed"

    def estimate(self, sys: ContrastSystem, target) -> float:
        col, sign = orient(sys, target)
        return sign * float(self.theta_hat[col])

    def variance(self, sys: ContrastSystem, target) -> float:
        col, _ = orient(sys, target)
        return float(self.cov_theta[col, col])


@dataclass(frozen=True)
class StudyContribution:
    study_id: str
    target: tuple[str, str]
    coeff: np.ndarray  # over the study's full pairwise contrasts
    value: float


def resolve_target(sys_or_labels, target) -> tuple[int, int]:
    """Accept ``"A:B"``, ``("A", "B")``, ``(i, j)`` or a :class:`ContrastId`; return indices."""
    labels = sys_or_labels.labels if hasattr(sys_or_labels, "labels") else tuple(sys_or_labels)
    if isinstance(target, str):
        parts = target.split(":")
        if len(parts) != 2:
            raise UnknownContrast(f"target {target!r} is not of the form A:B")
        target = tuple(parts)
    try:
        a, b = target
    except (TypeError, ValueError):
        raise UnknownContrast(f"cannot interpret target {target!r}") from None
    idx = []
    for t in (a, b):
        if isinstance(t, (int, np.integer)) and not isinstance(t, bool):
            if not 0 <= t < len(labels):
                raise UnknownContrast(f"treatment index {t} out of range")
            idx.append(int(t))
        elif t in labels:
            idx.append(labels.index(t))
        else:
            raise UnknownContrast(f"unknown treatment {t!r}")
    if idx[0] == idx[1]:
        raise UnknownContrast("target endpoints must differ")
    return idx[0], idx[1]


def orient(sys: ContrastSystem, target) -> tuple[int, float]:
    """Column of the all-pairs coordinate for a directed target and its sign."""
    a, b = resolve_target(sys, target)
    cid = ContrastId(min(a, b), max(a, b))
    return sys.contrast_index[cid], (1.0 if a < b else -1.0)


def fit(sys: ContrastSystem, rel_tol: float | None = None) -> tuple[ProjectionOperator, NmaFit]:
    rel_tol = PINV_RTOL if rel_tol is None else rel_tol
    v_pinv = blockdiag_pinv(sys.V_tilde, rel_tol)
    rank_v = blockdiag_rank(sys.V_tilde, rel_tol)
    VX = v_pinv.apply(sys.X_tilde)
    info = sys.X_tilde.T @ VX
    info = 0.5 * (info + info.T)
    G = incidence(sys.T)
    L = G.T @ info @ G
    L_pinv, rank_l = pseudoinverse(L, rel_tol)
    if rank_l.rank < sys.T - 1:
        raise DegenerateInformation(
            f"information has rank {rank_l.rank}, need {sys.T - 1}; some treatments are not identified"
        )
    info_pinv = G @ L_pinv @ G.T
    info_pinv = 0.5 * (info_pinv + info_pinv.T)
    op = ProjectionOperator(info, L, info_pinv, v_pinv, rank_v, rank_l)
    theta = info_pinv @ sys.Xt_apply(v_pinv.apply(sys.y_tilde))
    fitted = sys.X_apply(theta)
    nfit = NmaFit(theta, info_pinv, fitted, sys.y_tilde - fitted, sys.tau2, sys.het.mode)
    return op, nfit


def potential_flow(op: ProjectionOperator, sys: ContrastSystem, target) -> tuple[np.ndarray, np.ndarray]:
    u = op.potential(sys, target)
    return u, op.v_pinv.apply(sys.X_apply(u))


def structural_split(p_ab: np.ndarray, sys: ContrastSystem, target) -> tuple[float, float]:
    """Split ``p_ab' y~`` into rows observing the target contrast and everything else."""
    col, _ = orient(sys, target)
    direct = sys.cols == col
    terms = p_ab * sys.y_tilde
    return float(terms[direct].sum()), float(terms[~direct].sum())


def study_contributions(op: ProjectionOperator, sys: ContrastSystem, target) -> list[StudyContribution]:
    a, b = resolve_target(sys, target)
    label = (sys.labels[a], sys.labels[b])
    p = op.row(sys, (a, b))
    out = []
    for sb in sys.studies:
        s = sys.study_slices[sb.study_id]
        coeff = p[s].copy()
        out.append(StudyContribution(sb.study_id, label, coeff, float(coeff @ sys.y_tilde[s])))
    return out


def pairwise_variances(op: ProjectionOperator) -> np.ndarray:
    return np.diag(op.info_pinv).copy()


@dataclass(frozen=True)
class EquivalenceReport:
    max_dtheta: float
    max_dinfo: float  # on the consistency subspace, i.e. the Laplacians
    max_dq: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.max_dtheta <= self.tol and self.max_dinfo <= self.tol


def equivalence_check(net: TreatmentNetwork, het: HeterogeneitySpec | None = None, tol: float = 1e-9) -> EquivalenceReport:
    """Fit once with studies as given (basic blocks inverted directly) and once fully embedded."""
    from .diagnostics import q_test

    reduced = assemble_system(net, het, embed=False)
    full = assemble_system(net, het, embed=True)
    op_r, fit_r = fit(reduced)
    op_f, fit_f = fit(full)
    dq = abs(q_test(fit_r, reduced).q - q_test(fit_f, full).q)
    return EquivalenceReport(
        float(np.max(np.abs(fit_r.theta_hat - fit_f.theta_hat))),
        float(np.max(np.abs(op_r.laplacian - op_f.laplacian))),
        float(dq),
        tol,
    )


def target_labels(sys: ContrastSystem, targets: Sequence | None = None) -> list[tuple[int, int]]:
    """Resolve a list of targets, defaulting to every ``a<b`` pair."""
    if targets is None:
        return [(c.low, c.high) for c in sys.contrast_index]
    return [resolve_target(sys, t) for t in targets]
