"""Random treatment networks for property tests and calibration runs."""

from __future__ import annotations

import itertools
import string

import numpy as np

from .model import StudyBlock, TreatmentNetwork


def labels(T: int) -> list[str]:
    if T <= 26:
        return list(string.ascii_uppercase[:T])
    return [f"T{i:03d}" for i in range(T)]


def arm_covariance(arms, arm_var, baseline) -> tuple[list[tuple[str, str]], np.ndarray]:
    """Basic contrasts against ``baseline`` and their covariance under independent arms."""
    others = [t for t in arms if t != baseline]
    rows = [(baseline, t) for t in others]
    k = len(rows)
    cov = np.full((k, k), arm_var[baseline])
    cov[np.diag_indices(k)] += np.array([arm_var[t] for t in others])
    return rows, cov


def random_network(
    rng: np.random.Generator,
    T: int | None = None,
    n_studies: int | None = None,
    arm_sizes=(2, 2, 2, 3, 4),
    dyadic: bool = False,
    cov_kind: str = "arm",
    consistent_effects=None,
    noise: bool = True,
) -> TreatmentNetwork:
    """Connected random network of basic-representation studies.

    ``cov_kind="arm"`` builds covariances from independent arm variances;
    ``"random"`` draws an arbitrary positive definite matrix per multi-arm
    study. ``dyadic=True`` rounds effects and arm variances to multiples of
    1/64 so that re-encodings under another baseline are exact in floating
    point. ``consistent_effects`` (one value per treatment) makes the true
    contrasts consistent; observations add noise drawn from the study
    covariance unless ``noise=False``.
    """
    T = int(rng.integers(3, 9)) if T is None else T
    labs = labels(T)
    n_studies = int(rng.integers(T, 2 * T + 2)) if n_studies is None else n_studies
    # spanning tree first so the network is connected
    order = list(rng.permutation(T))
    study_arms = []
    for i in range(1, T):
        j = int(rng.integers(0, i))
        study_arms.append({labs[order[i]], labs[order[j]]})
    while len(study_arms) < n_studies:
        s = int(rng.choice(arm_sizes))
        s = min(s, T)
        study_arms.append(set(labs[t] for t in rng.choice(T, size=s, replace=False)))
    # grow a few tree studies into multi-arm ones
    for arms in study_arms[: T - 1]:
        if rng.random() < 0.25 and T > 2:
            arms.add(labs[int(rng.integers(0, T))])
    studies = []
    for k, arms in enumerate(study_arms):
        arms = sorted(arms)
        base = arms[int(rng.integers(0, len(arms)))]
        if dyadic:
            arm_var = {t: float(rng.integers(8, 64)) / 64.0 for t in arms}
        else:
            arm_var = {t: float(rng.uniform(0.05, 1.0)) for t in arms}
        rows, cov = arm_covariance(arms, arm_var, base)
        if cov_kind == "random" and len(rows) > 1:
            B = rng.normal(size=(len(rows), len(rows)))
            cov = B @ B.T / len(rows) + 0.1 * np.eye(len(rows))
        if consistent_effects is not None:
            mean = np.array([consistent_effects[labs.index(t)] - consistent_effects[labs.index(base)] for _, t in rows])
        else:
            mean = rng.normal(0.0, 0.5, size=len(rows))
        y = mean + (rng.multivariate_normal(np.zeros(len(rows)), cov) if noise else 0.0)
        if dyadic:
            y = np.round(y * 64.0) / 64.0
        studies.append(StudyBlock.from_oriented(f"S{k:02d}", [(a, b, e) for (a, b), e in zip(rows, y)], cov, baseline=base))
    return TreatmentNetwork.from_studies(studies)


def rebaseline(sb: StudyBlock, baseline: str) -> StudyBlock:
    """Re-encode a multi-arm study against another baseline arm (exact for dyadic data)."""
    from .model import embed_full

    full, _ = embed_full(sb)
    others = [t for t in full.treatments if t != baseline]
    idx = [full.index(baseline, t) for t in others]
    sign = np.array([1.0 if baseline < t else -1.0 for t in others])
    y = np.array([full.effects[i] for i in idx]) * sign
    S = np.zeros((len(others), len(full.contrasts)))
    for r, (i, s) in enumerate(zip(idx, sign)):
        S[r, i] = s
    # recover the basic covariance from the original (nonsingular) block
    cov = S @ full.cov @ S.T
    return StudyBlock.from_oriented(sb.study_id, [(baseline, t, e) for t, e in zip(others, y)], cov, baseline=baseline)


def triangle_network(y=(1.0, 1.0, 1.0), var=(1.0, 1.0, 1.0)) -> TreatmentNetwork:
    pairs = [("A", "B"), ("A", "C"), ("B", "C")]
    return TreatmentNetwork.from_studies(
        StudyBlock.from_oriented(f"{a}{b}", [(a, b, e)], [[v]]) for (a, b), e, v in zip(pairs, y, var)
    )


def all_baselines(sb: StudyBlock):
    for base in sb.treatments:
        yield rebaseline(sb, base)


def multiarm_ids(net: TreatmentNetwork) -> list[str]:
    return [s.study_id for s in net.studies if len(s.treatments) >= 3]


def baseline_choices(net: TreatmentNetwork):
    """Every combination of baselines for the multi-arm studies of ``net``."""
    multi = [s for s in net.studies if len(s.treatments) >= 3]
    for combo in itertools.product(*[s.treatments for s in multi]):
        chosen = dict(zip((s.study_id for s in multi), combo))
        yield TreatmentNetwork.from_studies(
            rebaseline(s, chosen[s.study_id]) if s.study_id in chosen else s for s in net.studies
        )
