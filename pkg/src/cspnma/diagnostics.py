"""Forest rows, tension rows and the global inconsistency Q test."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .errors import DimError
from .model import ContrastSystem
from .projection import NmaFit


@dataclass(frozen=True)
class QResult:
    q: float
    df: int
    p_value: float
    rank_v: int
    T: int
    flags: tuple[str, ...] = ()


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution, ``Q(df/2, x/2)``."""
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise DimError(f"degrees of freedom must be a positive integer, got {df!r}")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def z_value(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(special.ndtri(1.0 - alpha / 2.0))


def q_test(fit: NmaFit, sys: ContrastSystem) -> QResult:
    from .linalg import blockdiag_pinv, blockdiag_rank

    r = fit.residual
    q = float(r @ blockdiag_pinv(sys.V_tilde).apply(r))
    q = max(q, 0.0)
    rank_v = blockdiag_rank(sys.V_tilde).rank
    df = rank_v - (sys.T - 1)
    flags = []
    if fit.mode != "fixed":
        flags.append("approximate (plug-in tau2)")
    if df <= 0:
        flags.append("NoInconsistencyDF")
        return QResult(q, max(df, 0), 1.0, rank_v, sys.T, tuple(flags))
    return QResult(q, df, chi2_sf(q, df), rank_v, sys.T, tuple(flags))


# ---------------------------------------------------------------------------
# forest and tension rows

FOREST_KINDS = ("direct_study", "indirect_path", "direct_summary", "indirect_summary", "network")


@dataclass(frozen=True)
class ForestRow:
    """One forest-plot row.

    ``estimate``/``ci_*`` are on the normalized scale (study contrast, path
    contrast, summary estimate); ``contribution``/``contribution_ci_*`` carry
    the additive ``w * estimate`` form whose sum over component rows is the
    network estimate.
    """

    kind: str
    label: str
    estimate: float
    ci_low: float
    ci_high: float
    weight: float
    weight_pct: float
    variance: float
    contribution: float
    contribution_ci_low: float
    contribution_ci_high: float
    studies: tuple[str, ...] = ()
    nodes: tuple[str, ...] = ()


def _row(kind, label, est, var, weight, pct, z, studies=(), nodes=()):
    half = z * math.sqrt(max(var, 0.0))
    return ForestRow(
        kind, label, est, est - half, est + half, weight, pct, var,
        weight * est, weight * est - weight * half, weight * est + weight * half,
        tuple(studies), tuple(nodes),
    )


def forest(dec, alpha: float = 0.05) -> list[ForestRow]:
    """Rows for direct studies, indirect paths, both summaries and the network estimate."""
    from .canonical import aggregate
    from .errors import EmptyTarget

    if not dec.direct and not dec.paths:
        raise EmptyTarget(f"target {dec.target[0]}:{dec.target[1]} has no components")
    z = z_value(alpha)
    total = math.fsum([c.direct_weight for c in dec.direct] + [p.weight for p in dec.paths])
    rows = []
    for c in dec.direct:
        rows.append(_row("direct_study", c.study_id, c.observed, c.sigma2, c.direct_weight,
                         100.0 * c.direct_weight / total, z, (c.study_id,), dec.target))
    agg = aggregate(dec)
    if agg.theta_dir is not None:
        rows.append(_row("direct_summary", "Direct", agg.theta_dir, agg.var_dir, agg.w_dir, 100.0 * agg.w_dir, z))
    for p in dec.paths:
        label = f"{'/'.join(p.segment_studies)} {p.arrow()}"
        rows.append(_row("indirect_path", label, p.delta, p.variance, p.weight, 100.0 * p.weight / total, z,
                         p.segment_studies, p.nodes))
    if agg.theta_ind is not None:
        rows.append(_row("indirect_summary", "Indirect", agg.theta_ind, agg.var_ind, agg.w_ind, 100.0 * agg.w_ind, z))
    rows.append(_row("network", "Network", dec.theta_hat, dec.var_nma, 1.0, 100.0, z))
    return rows


@dataclass(frozen=True)
class TensionPoint:
    estimate: float
    ci_low: float
    ci_high: float
    weight: float


@dataclass(frozen=True)
class TensionRow:
    target: tuple[str, str]
    dir: TensionPoint | None
    ind: TensionPoint | None
    nma: TensionPoint
    independence_approximate: bool = False


def tension(decs, alpha: float = 0.05) -> list[TensionRow]:
    """Direct, indirect and network estimates per comparison.

    ``weight`` on the direct/indirect points is ``w_dir``/``w_ind`` and sets
    the symbol size.
    """
    from .canonical import aggregate

    z = z_value(alpha)
    out = []
    for dec in decs:
        agg = aggregate(dec)

        def point(est, var, w):
            if est is None:
                return None
            half = z * math.sqrt(max(var, 0.0))
            return TensionPoint(est, est - half, est + half, w)

        out.append(TensionRow(
            dec.target,
            point(agg.theta_dir, agg.var_dir, agg.w_dir),
            point(agg.theta_ind, agg.var_ind, agg.w_ind),
            point(dec.theta_hat, dec.var_nma, 1.0),
            agg.independence_approximate,
        ))
    return out


def baseline_targets(labels, baseline: str) -> list[tuple[str, str]]:
    if baseline not in labels:
        from .errors import UnknownContrast

        raise UnknownContrast(f"unknown baseline treatment {baseline!r}")
    return [(baseline, t) for t in labels if t != baseline]
