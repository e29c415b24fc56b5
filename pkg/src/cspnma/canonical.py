"""Canonical study-based decomposition of a network estimate.

For a target ``a -> b`` every study's slice of the projection row is turned
into a directed weighted graph (each contrast oriented by the sign of its
coefficient). The collapse operator drains that graph by repeatedly taking
the heaviest source-to-sink path, subtracting its bottleneck weight and
recording the weight on the path's endpoint edge. The weight left on the
edge ``a -> b`` is the study's direct weight; the remaining collapsed edges
of all studies are pooled into one study-labelled multigraph from which
``a -> b`` paths are extracted the same way.

Path choice is a total order: larger bottleneck first, then fewer edges,
then the lexicographically smallest node sequence, then the smallest
sequence of study ids.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, NamedTuple

import numpy as np

from .errors import DecompositionFailure, NotInConsistencySubspace
from .model import ContrastSystem, StudyBlock
from .projection import NmaFit, ProjectionOperator, resolve_target
from .tolerances import EPS_FLOW, NORMALIZATION_FAIL, SUBSPACE_RTOL

Edge = tuple  # (u, v, label)


def _best_path(
    edges: dict[Edge, float],
    starts: Iterable[Hashable],
    ends: Iterable[Hashable],
    label_key: Callable = lambda l: l,
) -> tuple[list, list, float] | None:
    """Heaviest path from any start to any end under the deterministic order.

    Returns ``(nodes, labels, bottleneck)`` or ``None`` when no end is reachable.
    """
    starts, ends = sorted(set(starts)), set(ends)
    if not starts or not ends:
        return None
    adj = defaultdict(list)
    for (u, v, l), w in edges.items():
        adj[u].append((v, l, w))
    # max-bottleneck Dijkstra from all starts at once
    width = {s: math.inf for s in starts}
    heap = [(-math.inf, i, s) for i, s in enumerate(starts)]
    counter = len(heap)
    best = -1.0
    while heap:
        negw, _, u = heapq.heappop(heap)
        w = -negw
        if w < width.get(u, -1.0):
            continue
        if u in ends:
            best = w
            break
        for v, _, we in adj[u]:
            nw = min(w, we)
            if nw > width.get(v, -1.0):
                width[v] = nw
                counter += 1
                heapq.heappush(heap, (-nw, counter, v))
    if best < 0:
        return None
    # among paths with bottleneck >= best: shortest, then lexicographic
    radj = defaultdict(list)
    for (u, v, l), w in edges.items():
        if w >= best:
            radj[v].append(u)
    dist = {e: 0 for e in ends}
    queue = deque(sorted(ends))
    while queue:
        v = queue.popleft()
        for u in radj[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    reachable = [s for s in starts if s in dist and s not in ends]
    if not reachable:
        return None
    cur = min(reachable, key=lambda s: (dist[s], s))
    nodes, labels, weights = [cur], [], []
    while dist[cur] > 0:
        nxt = min(
            ((v, label_key(l), l, w) for v, l, w in adj[cur] if w >= best and dist.get(v) == dist[cur] - 1),
            key=lambda t: (t[0], t[1]),
        )
        nodes.append(nxt[0])
        labels.append(nxt[2])
        weights.append(nxt[3])
        cur = nxt[0]
    return nodes, labels, min(weights)


def _subtract(edges: dict[Edge, float], nodes, labels, w: float, eps: float) -> None:
    for u, v, l in zip(nodes[:-1], nodes[1:], labels):
        key = (u, v, l)
        rest = edges[key] - w
        if rest <= eps:
            del edges[key]
        else:
            edges[key] = rest


def collapse_flow(weights: dict[tuple, float], eps: float = EPS_FLOW) -> tuple[dict[tuple, float], dict[tuple, float]]:
    """Collapse a directed weighted graph ``{(u, v): w}`` into source-to-sink edges.

    Returns the canonical edge weights and whatever could not be drained
    (only circulations remain when the input contains directed cycles).
    """
    g = {(u, v, 0): float(w) for (u, v), w in weights.items() if w > eps}
    canon: dict[tuple, float] = {}
    while g:
        has_in = {v for (_, v, _) in g}
        has_out = {u for (u, _, _) in g}
        found = _best_path(g, has_out - has_in, has_in - has_out)
        if found is None:
            break
        nodes, labels, w = found
        _subtract(g, nodes, labels, w, eps)
        key = (nodes[0], nodes[-1])
        canon[key] = canon.get(key, 0.0) + w
    return canon, {(u, v): w for (u, v, _), w in g.items()}


def coefficient_graph(coeff, contrasts, eps: float = EPS_FLOW) -> dict[tuple, float]:
    """Orient each contrast by the sign of its coefficient."""
    out = {}
    for c, (lo, hi) in zip(coeff, contrasts):
        if c > eps:
            out[(lo, hi)] = float(c)
        elif c < -eps:
            out[(hi, lo)] = float(-c)
    return out


def edges_to_coeff(edges: dict[tuple, float], contrasts) -> np.ndarray:
    idx = {p: i for i, p in enumerate(contrasts)}
    z = np.zeros(len(contrasts))
    for (u, v), w in edges.items():
        if u < v:
            z[idx[(u, v)]] += w
        else:
            z[idx[(v, u)]] -= w
    return z


class CollapseResult(NamedTuple):
    canonical_coeff: np.ndarray
    w_direct: float
    edges: dict
    residual_mass: float


def collapse(study_coeff, study: StudyBlock, target: tuple[str, str], eps: float = EPS_FLOW, check: bool = True) -> CollapseResult:
    """Canonical within-study representation of a study's coefficient vector.

    ``study`` must be in full pairwise form; ``target`` is a directed pair of
    labels. The direct weight is the canonical weight on ``a -> b``.
    """
    coeff = np.asarray(study_coeff, dtype=float)
    if study.baseline is not None:
        raise ValueError("collapse needs a full pairwise study block")
    if check and len(study.treatments) > 2:
        C = _within_constraints(study)
        scale = max(float(np.max(np.abs(coeff), initial=0.0)), 1e-300)
        viol = float(np.max(np.abs(C @ coeff), initial=0.0))
        if viol > SUBSPACE_RTOL * scale:
            raise NotInConsistencySubspace(
                f"study {study.study_id}: coefficient vector violates within-study consistency by {viol:.3g}"
            )
    canon, resid = collapse_flow(coefficient_graph(coeff, study.contrasts, eps), eps)
    return CollapseResult(
        edges_to_coeff(canon, study.contrasts),
        canon.get(tuple(target), 0.0),
        canon,
        float(sum(resid.values())),
    )


def _within_constraints(sb: StudyBlock) -> np.ndarray:
    import itertools

    idx = {p: i for i, p in enumerate(sb.contrasts)}
    rows = []
    for a, b, c in itertools.combinations(sb.treatments, 3):
        r = np.zeros(len(idx))
        r[idx[(a, c)]] = 1.0
        r[idx[(a, b)]] = -1.0
        r[idx[(b, c)]] = -1.0
        rows.append(r)
    return np.array(rows).reshape(len(rows), len(idx))


@dataclass(frozen=True, eq=False)
class CanonicalStudyComponent:
    study_id: str
    target: tuple[str, str]
    direct_weight: float
    canonical_coeff: np.ndarray
    indirect_coeff: np.ndarray
    observed: float | None  # y~_ab,k oriented a -> b, None if the study lacks a or b
    sigma2: float | None

    @property
    def direct_value(self) -> float:
        return self.direct_weight * self.observed if self.observed is not None else 0.0

    @property
    def direct_variance(self) -> float:
        return self.direct_weight**2 * self.sigma2 if self.sigma2 is not None else 0.0


@dataclass(frozen=True)
class StudyPath:
    nodes: tuple[str, ...]
    segment_studies: tuple[str, ...]
    weight: float
    delta: float
    variance: float

    @property
    def contribution(self) -> float:
        return self.weight * self.delta

    def arrow(self) -> str:
        return "→".join(self.nodes)


@dataclass(frozen=True, eq=False)
class CanonicalDecomposition:
    target: tuple[str, str]
    theta_hat: float
    var_nma: float
    direct: tuple[CanonicalStudyComponent, ...]
    paths: tuple[StudyPath, ...]
    components: tuple[CanonicalStudyComponent, ...] = field(repr=False)
    residual_mass: float = 0.0

    @property
    def w_dir(self) -> float:
        return math.fsum(c.direct_weight for c in self.direct)

    @property
    def w_ind(self) -> float:
        return math.fsum(p.weight for p in self.paths)

    @property
    def c_dir(self) -> float:
        return math.fsum(c.direct_value for c in self.direct)

    @property
    def c_ind(self) -> float:
        return math.fsum(p.contribution for p in self.paths)

    @property
    def theta_dir(self) -> float | None:
        return self.c_dir / self.w_dir if self.w_dir > EPS_FLOW else None

    @property
    def theta_ind(self) -> float | None:
        return self.c_ind / self.w_ind if self.w_ind > EPS_FLOW else None

    @property
    def normalization_error(self) -> float:
        return abs(self.w_dir + self.w_ind - 1.0)

    @property
    def reconstruction_error(self) -> float:
        return abs(self.c_dir + self.c_ind - self.theta_hat)

    @property
    def shares_studies(self) -> bool:
        """True when one study feeds more than one component (direct row or path)."""
        seen = [c.study_id for c in self.direct]
        for p in self.paths:
            seen.extend(set(p.segment_studies))
        return len(seen) != len(set(seen)) or any(len(set(p.segment_studies)) < len(p.segment_studies) for p in self.paths)


def _path_stats(sys: ContrastSystem, nodes, studies) -> tuple[float, float]:
    by_study: dict[str, np.ndarray] = {}
    delta = 0.0
    for u, v, sid in zip(nodes[:-1], nodes[1:], studies):
        sb = sys.study(sid)
        delta += sb.directed_effect(u, v)
        g = by_study.setdefault(sid, np.zeros(len(sb.contrasts)))
        g[sb.index(u, v)] += 1.0 if u < v else -1.0
    var = math.fsum(float(g @ sys.study(sid).cov @ g) for sid, g in by_study.items())
    return delta, var


def decompose(op: ProjectionOperator, sys: ContrastSystem, target, eps: float = EPS_FLOW) -> CanonicalDecomposition:
    a, b = resolve_target(sys, target)
    la, lb = sys.labels[a], sys.labels[b]
    p = op.row(sys, (a, b))
    theta = float(p @ sys.y_tilde)
    col = sys.contrast_index[(min(a, b), max(a, b))]
    var_nma = float(op.info_pinv[col, col])

    components, direct = [], []
    pool: dict[Edge, float] = {}
    residual = 0.0
    for k, sb in enumerate(sys.studies):
        coeff = p[sys.study_slices[sb.study_id]]
        res = collapse(coeff, sb, (la, lb), eps)
        residual += res.residual_mass
        has_pair = la in sb.treatments and lb in sb.treatments
        w = res.w_direct
        dir_coeff = np.zeros_like(res.canonical_coeff)
        if w > 0:
            i = sb.index(la, lb)
            dir_coeff[i] = w if la < lb else -w
        comp = CanonicalStudyComponent(
            sb.study_id,
            (la, lb),
            w,
            res.canonical_coeff,
            res.canonical_coeff - dir_coeff,
            sb.directed_effect(la, lb) if has_pair else None,
            float(sb.cov[sb.index(la, lb), sb.index(la, lb)]) if has_pair else None,
        )
        components.append(comp)
        if w > 0:
            direct.append(comp)
        for (u, v), wt in res.edges.items():
            if (u, v) != (la, lb):
                pool[(u, v, k)] = wt

    study_ids = [s.study_id for s in sys.studies]
    paths = []
    while True:
        found = _best_path(pool, [la], [lb], label_key=lambda k: study_ids[k])
        if found is None:
            break
        nodes, ks, w = found
        _subtract(pool, nodes, ks, w, eps)
        sids = tuple(study_ids[k] for k in ks)
        delta, var = _path_stats(sys, nodes, sids)
        paths.append(StudyPath(tuple(nodes), sids, w, delta, var))
    residual += math.fsum(pool.values())

    direct.sort(key=lambda c: (-c.direct_weight, c.study_id))
    dec = CanonicalDecomposition((la, lb), theta, var_nma, tuple(direct), tuple(paths), tuple(components), residual)
    if dec.normalization_error > NORMALIZATION_FAIL:
        raise DecompositionFailure(
            f"target {la}:{lb}: weights sum to {dec.w_dir + dec.w_ind:.12g}, residual mass {residual:.3g}"
        )
    return dec


@dataclass(frozen=True)
class Aggregate:
    theta_dir: float | None
    theta_ind: float | None
    var_c_dir: float
    var_c_ind: float
    var_dir: float | None
    var_ind: float | None
    var_nma: float
    w_dir: float
    w_ind: float
    independence_approximate: bool


def aggregate(dec: CanonicalDecomposition, sys: ContrastSystem | None = None) -> Aggregate:
    """Normalized direct/indirect estimates and their independence-based variances.

    The network variance is always the exact effective resistance; component
    variances assume independent components and are flagged otherwise.
    """
    var_c_dir = math.fsum(c.direct_variance for c in dec.direct)
    var_c_ind = math.fsum(p.weight**2 * p.variance for p in dec.paths)
    w_dir, w_ind = dec.w_dir, dec.w_ind
    return Aggregate(
        dec.theta_dir,
        dec.theta_ind,
        var_c_dir,
        var_c_ind,
        var_c_dir / w_dir**2 if dec.theta_dir is not None else None,
        var_c_ind / w_ind**2 if dec.theta_ind is not None else None,
        dec.var_nma,
        w_dir,
        w_ind,
        dec.shares_studies,
    )
