"""Treatment network domain model and the stacked full-contrast system.

Conventions
-----------
Treatments are ordered lexicographically by label. A contrast is stored as
``(low, high)`` under that ordering and its effect is ``high`` relative to
``low``; inputs given the other way round are sign-flipped on ingestion.
Coordinates of the all-pairs contrast vector follow ``(0,1), (0,2), ...,
(T-2,T-1)``.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DisconnectedNetwork, MalformedStudy, NonPsdStudy, TauNotEstimable
from .linalg import BlockDiag
from .tolerances import PSD_ATOL


class ContrastId(NamedTuple):
    low: int
    high: int


@dataclass(frozen=True)
class Treatment:
    id: str
    index: int


def n_contrasts(T: int) -> int:
    return T * (T - 1) // 2


def all_pairs(T: int) -> list[ContrastId]:
    return [ContrastId(i, j) for i, j in itertools.combinations(range(T), 2)]


def incidence(T: int) -> np.ndarray:
    """Map node potentials to all-pairs contrasts: ``(G phi)_ab = phi_b - phi_a``."""
    G = np.zeros((n_contrasts(T), T))
    for r, (a, b) in enumerate(all_pairs(T)):
        G[r, a] = -1.0
        G[r, b] = 1.0
    return G


def consistency_matrix(T: int) -> np.ndarray:
    """Triangle relations ``theta_ac - theta_ab - theta_bc = 0`` for all ``a<b<c``.

    The generating set is redundant for ``T > 3``; only its null space (the
    consistency subspace, dimension ``T-1``) is used.
    """
    if T < 2:
        raise ValueError("need at least two treatments")
    col = {p: i for i, p in enumerate(all_pairs(T))}
    rows = []
    for a, b, c in itertools.combinations(range(T), 3):
        r = np.zeros(len(col))
        r[col[(a, c)]] = 1.0
        r[col[(a, b)]] = -1.0
        r[col[(b, c)]] = -1.0
        rows.append(r)
    return np.array(rows).reshape(len(rows), len(col))


# ---------------------------------------------------------------------------
# studies


def _pairs_of(labels: Sequence[str]) -> list[tuple[str, str]]:
    return list(itertools.combinations(sorted(labels), 2))


@dataclass(frozen=True, eq=False)
class StudyBlock:
    """One study's observed contrasts and their within-study covariance.

    ``contrasts`` are canonical ``(low, high)`` label pairs with ``effects``
    measured as high versus low. ``baseline`` is set for the basic-contrast
    representation (``|S|-1`` contrasts sharing the baseline) and ``None`` for
    the full pairwise representation. Two-arm studies are always full.
    """

    study_id: str
    treatments: tuple[str, ...]
    contrasts: tuple[tuple[str, str], ...]
    effects: np.ndarray
    cov: np.ndarray
    baseline: str | None = None

    def __post_init__(self):
        sid = self.study_id
        treatments = tuple(sorted(self.treatments))
        if len(set(treatments)) != len(treatments):
            raise MalformedStudy(f"study {sid}: repeated treatment label")
        if len(treatments) < 2:
            raise MalformedStudy(f"study {sid}: needs at least two treatments")
        contrasts = tuple((str(a), str(b)) for a, b in self.contrasts)
        for a, b in contrasts:
            if not a < b:
                raise MalformedStudy(f"study {sid}: contrast {a}:{b} not in canonical orientation")
            if a not in treatments or b not in treatments:
                raise MalformedStudy(f"study {sid}: contrast {a}:{b} uses a treatment outside the study")
        if len(set(contrasts)) != len(contrasts):
            raise MalformedStudy(f"study {sid}: duplicate contrast")
        s = len(treatments)
        baseline = self.baseline
        if s == 2:
            baseline = None
        if baseline is None:
            if sorted(contrasts) != _pairs_of(treatments):
                raise MalformedStudy(
                    f"study {sid}: full pairwise representation needs all {s * (s - 1) // 2} contrasts"
                )
        else:
            if baseline not in treatments:
                raise MalformedStudy(f"study {sid}: baseline {baseline} not in study")
            others = sorted(t for t in treatments if t != baseline)
            got = sorted(b if a == baseline else a for a, b in contrasts if baseline in (a, b))
            if len(contrasts) != s - 1 or got != others:
                raise MalformedStudy(f"study {sid}: basic representation must list one contrast per non-baseline arm against {baseline}")
        effects = np.array(self.effects, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(len(contrasts), len(contrasts)) if np.size(self.cov) == len(contrasts) ** 2 else None
        if cov is None or effects.shape != (len(contrasts),):
            raise MalformedStudy(f"study {sid}: effect/covariance dimensions do not match the contrast list")
        if not (np.all(np.isfinite(effects)) and np.all(np.isfinite(cov))):
            raise MalformedStudy(f"study {sid}: non-finite values")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise MalformedStudy(f"study {sid}: covariance not symmetric")
        cov = 0.5 * (cov + cov.T)
        lam_min = float(np.linalg.eigvalsh(cov).min())
        if lam_min < -PSD_ATOL:
            raise NonPsdStudy(f"study {sid}: covariance not PSD (min eigenvalue {lam_min:.3g})")
        object.__setattr__(self, "treatments", treatments)
        object.__setattr__(self, "contrasts", contrasts)
        object.__setattr__(self, "effects", effects)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "baseline", baseline)
        effects.flags.writeable = False
        cov.flags.writeable = False

    @property
    def representation(self) -> str:
        return "full" if self.baseline is None else "basic"

    @classmethod
    def from_oriented(cls, study_id, rows, cov, baseline: str | None = None) -> "StudyBlock":
        """Build a block from ``(treat_a, treat_b, effect)`` rows in any orientation.

        ``effect`` is treat_b relative to treat_a; rows given high-to-low are
        flipped, together with the matching rows/columns of ``cov``.
        """
        rows = list(rows)
        signs = np.array([1.0 if a < b else -1.0 for a, b, _ in rows])
        contrasts = [(a, b) if a < b else (b, a) for a, b, _ in rows]
        effects = signs * np.array([float(e) for _, _, e in rows])
        cov = np.asarray(cov, dtype=float) * np.outer(signs, signs)
        treatments = sorted({t for pair in contrasts for t in pair})
        if baseline is None and len(treatments) > 2 and len(rows) == len(treatments) - 1:
            common = set(treatments)
            for pair in contrasts:
                common &= set(pair)
            if len(common) != 1:
                raise MalformedStudy(f"study {study_id}: {len(rows)} contrasts do not share a baseline arm")
            baseline = common.pop()
        return cls(str(study_id), tuple(treatments), tuple(contrasts), effects, cov, baseline)

    def index(self, a: str, b: str) -> int:
        return self.contrasts.index((a, b) if a < b else (b, a))

    def directed_effect(self, u: str, v: str) -> float:
        """Effect of ``v`` relative to ``u`` for a contrast listed in this block."""
        i = self.index(u, v)
        return float(self.effects[i]) if u < v else -float(self.effects[i])

    def same_data(self, other: "StudyBlock") -> bool:
        return (
            self.study_id == other.study_id
            and self.treatments == other.treatments
            and self.contrasts == other.contrasts
            and self.baseline == other.baseline
            and np.array_equal(self.effects, other.effects)
            and np.array_equal(self.cov, other.cov)
        )


def expansion_matrix(sb: StudyBlock) -> np.ndarray:
    """The matrix ``A`` mapping the study's listed contrasts to all its pairwise contrasts."""
    pairs = _pairs_of(sb.treatments)
    if sb.baseline is None:
        if list(sb.contrasts) == pairs:
            return np.eye(len(pairs))
        # reorder rows into canonical pair order
        A = np.zeros((len(pairs), len(sb.contrasts)))
        for r, p in enumerate(pairs):
            A[r, sb.contrasts.index(p)] = 1.0
        return A
    base = sb.baseline
    # d(t) = effect of t versus baseline = sign * y_j
    col, sign = {}, {}
    for j, (a, b) in enumerate(sb.contrasts):
        if a == base:
            col[b], sign[b] = j, 1.0
        elif b == base:
            col[a], sign[a] = j, -1.0
        else:
            raise MalformedStudy(f"study {sb.study_id}: contrast {a}:{b} does not involve baseline {base}")
    A = np.zeros((len(pairs), len(sb.contrasts)))
    for r, (u, v) in enumerate(pairs):
        if v != base:
            A[r, col[v]] += sign[v]
        if u != base:
            A[r, col[u]] -= sign[u]
    return A


def embed_full(sb: StudyBlock) -> tuple[StudyBlock, np.ndarray]:
    """Expand a study to its full pairwise representation.

    Returns the full block with ``y~ = A y`` and ``V~ = A V A'`` together with ``A``.
    """
    if sb.baseline is None and list(sb.contrasts) == _pairs_of(sb.treatments):
        return sb, np.eye(len(sb.contrasts))
    A = expansion_matrix(sb)
    y = A @ sb.effects
    V = A @ sb.cov @ A.T
    full = StudyBlock(sb.study_id, sb.treatments, tuple(_pairs_of(sb.treatments)), y, 0.5 * (V + V.T), None)
    return full, A


def heterogeneity_structure(contrasts: Sequence[tuple[str, str]]) -> np.ndarray:
    """Covariance of the listed contrasts under unit-variance between-study effects.

    Arm-level random effects with variance 1/2 per arm give 1 on the diagonal,
    +1/2 for two contrasts sharing an arm in the same role (both low or both
    high), -1/2 when the shared arm plays opposite roles, 0 otherwise.
    """
    k = len(contrasts)
    D = np.zeros((k, k))
    for i, (u, v) in enumerate(contrasts):
        for j, (w, x) in enumerate(contrasts):
            D[i, j] = 0.5 * ((v == x) - (v == w) - (u == x) + (u == w))
    return D


def apply_heterogeneity(sb: StudyBlock, tau2: float) -> StudyBlock:
    if tau2 < 0:
        raise ValueError("tau2 must be nonnegative")
    if tau2 == 0:
        return sb
    cov = sb.cov + tau2 * heterogeneity_structure(sb.contrasts)
    return replace(sb, cov=cov)


# ---------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class TreatmentNetwork:
    treatments: tuple[Treatment, ...]
    studies: tuple[StudyBlock, ...]

    @classmethod
    def from_studies(cls, studies: Iterable[StudyBlock]) -> "TreatmentNetwork":
        studies = tuple(studies)
        labels = sorted({t for s in studies for t in s.treatments})
        return cls(tuple(Treatment(l, i) for i, l in enumerate(labels)), studies)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.treatments)

    @property
    def T(self) -> int:
        return len(self.treatments)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def components(self) -> list[list[str]]:
        adj: dict[str, set[str]] = {l: set() for l in self.labels}
        for s in self.studies:
            for a, b in _pairs_of(s.treatments):
                adj[a].add(b)
                adj[b].add(a)
        seen, comps = set(), []
        for start in self.labels:
            if start in seen:
                continue
            comp, queue = [], deque([start])
            seen.add(start)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in sorted(adj[u]):
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.components()) == 1


@dataclass(frozen=True)
class HeterogeneitySpec:
    mode: str = "fixed"  # fixed | random_given | random_estimated
    tau2: float | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "random_given", "random_estimated"):
            raise ValueError(f"unknown heterogeneity mode {self.mode!r}")
        if self.mode == "random_given" and (self.tau2 is None or self.tau2 < 0):
            raise ValueError("random_given needs tau2 >= 0")
        if self.tau2 is not None and self.tau2 < 0:
            raise ValueError("tau2 must be nonnegative")

    @classmethod
    def fixed(cls):
        return cls("fixed")

    @classmethod
    def given(cls, tau2: float):
        return cls("random_given", float(tau2))

    @classmethod
    def estimated(cls):
        return cls("random_estimated")


@dataclass(frozen=True, eq=False)
class ContrastSystem:
    """Stacked observations ``y~``, indicator design ``X~`` and block covariance ``V~``.

    ``cols[r]`` is the all-pairs coordinate observed by row ``r``; ``X~`` has a
    single +1 per row at that column.
    """

    labels: tuple[str, ...]
    studies: tuple[StudyBlock, ...]
    y_tilde: np.ndarray
    cols: np.ndarray
    V_tilde: BlockDiag
    study_slices: dict[str, slice]
    contrast_index: dict[ContrastId, int]
    het: HeterogeneitySpec = field(default_factory=HeterogeneitySpec.fixed)
    tau2: float = 0.0

    @property
    def T(self) -> int:
        return len(self.labels)

    @property
    def m(self) -> int:
        return n_contrasts(self.T)

    @property
    def n(self) -> int:
        return len(self.y_tilde)

    @property
    def X_tilde(self) -> np.ndarray:
        X = np.zeros((self.n, self.m))
        X[np.arange(self.n), self.cols] = 1.0
        return X

    def X_apply(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float)[self.cols]

    def Xt_apply(self, r) -> np.ndarray:
        return np.bincount(self.cols, weights=np.asarray(r, dtype=float), minlength=self.m)

    def study(self, study_id: str) -> StudyBlock:
        for s in self.studies:
            if s.study_id == study_id:
                return s
        raise KeyError(study_id)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def within_study_constraints(self, sb: StudyBlock) -> np.ndarray:
        """Triangle relations on the study's own full pairwise coordinates."""
        idx = {p: i for i, p in enumerate(sb.contrasts)}
        rows = []
        for a, b, c in itertools.combinations(sb.treatments, 3):
            r = np.zeros(len(idx))
            r[idx[(a, c)]] = 1.0
            r[idx[(a, b)]] = -1.0
            r[idx[(b, c)]] = -1.0
            rows.append(r)
        return np.array(rows).reshape(len(rows), len(idx))


def assemble_system(net: TreatmentNetwork, het: HeterogeneitySpec | None = None, *, embed: bool = True) -> ContrastSystem:
    """Stack all studies into one system.

    With ``embed=False`` basic-representation studies are kept as given; this
    is only used to cross-check the full representation.
    """
    het = het or HeterogeneitySpec.fixed()
    ids = [s.study_id for s in net.studies]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise MalformedStudy(f"duplicate study ids: {', '.join(dup)}")
    if not net.studies or net.T < 2:
        raise DisconnectedNetwork("network needs at least one study and two treatments")
    comps = net.components()
    if len(comps) > 1:
        raise DisconnectedNetwork("evidence graph has components " + " | ".join(",".join(c) for c in comps))
    if het.mode == "random_estimated":
        tau2 = estimate_tau2(net)
    else:
        tau2 = float(het.tau2 or 0.0)
    het = replace(het, tau2=tau2) if het.mode != "fixed" else het
    labels = net.labels
    pos = {l: i for i, l in enumerate(labels)}
    col = {p: i for i, p in enumerate(all_pairs(net.T))}
    studies, ys, cols, blocks, slices = [], [], [], [], {}
    row = 0
    for sb in net.studies:
        if embed:
            sb = embed_full(sb)[0]
        sb = apply_heterogeneity(sb, tau2)
        studies.append(sb)
        k = len(sb.contrasts)
        slices[sb.study_id] = slice(row, row + k)
        row += k
        ys.append(sb.effects)
        cols.extend(col[(pos[a], pos[b])] for a, b in sb.contrasts)
        blocks.append(sb.cov)
    return ContrastSystem(
        labels=labels,
        studies=tuple(studies),
        y_tilde=np.concatenate(ys),
        cols=np.array(cols, dtype=int),
        V_tilde=BlockDiag(tuple(blocks)),
        study_slices=slices,
        contrast_index={ContrastId(*p): i for p, i in col.items()},
        het=het,
        tau2=tau2,
    )


def expected_q(sys0: ContrastSystem, tau2: float, op=None) -> float:
    """Expectation of the fixed-effect Q statistic when the true covariance is ``V(tau2)``."""
    from .projection import fit

    if op is None:
        op, _ = fit(sys0)
    X = sys0.X_tilde
    H = X @ op.info_pinv @ op.v_pinv.apply(X).T
    R = np.eye(sys0.n) - H
    V = sys0.V_tilde.dense()
    if tau2:
        V = V + tau2 * BlockDiag(tuple(heterogeneity_structure(s.contrasts) for s in sys0.studies)).dense()
    return float(np.trace(op.v_pinv.apply(R @ V @ R.T)))


def estimate_tau2(net: TreatmentNetwork) -> float:
    """Method-of-moments heterogeneity variance from the fixed-effect fit.

    ``tau2 = max(0, (Q - df) / dE[Q]/dtau2)``. ``E[Q]`` is linear in ``tau2``
    so the unit-step difference is its exact derivative. For a single
    comparison this is the DerSimonian-Laird estimator.
    """
    from .diagnostics import q_test
    from .projection import fit

    sys0 = assemble_system(net, HeterogeneitySpec.fixed())
    op, nfit = fit(sys0)
    q = q_test(nfit, sys0)
    if q.df == 0:
        raise TauNotEstimable("no residual degrees of freedom to estimate tau2")
    slope = expected_q(sys0, 1.0, op) - expected_q(sys0, 0.0, op)
    if slope <= 0:
        raise TauNotEstimable("expected Q does not increase with tau2")
    return max(0.0, (q.q - q.df) / slope)
