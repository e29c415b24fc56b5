"""CSV loaders for contrast-level and arm-level binary data, and a contrast writer."""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import MalformedStudy
from .model import StudyBlock, TreatmentNetwork, embed_full

log = logging.getLogger(__name__)

CONTRAST_HEADER = ("study", "treat_a", "treat_b", "effect", "se")
COV_HEADER = ("study", "pair1_a", "pair1_b", "pair2_a", "pair2_b", "cov")
ARM_HEADER = ("study", "treatment", "events", "total")


def _read(path, header) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        got = tuple(h.strip() for h in (reader.fieldnames or ()))
        missing = [h for h in header if h not in got]
        if missing:
            raise MalformedStudy(f"{path}: missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            if not any(row.values()):
                continue
            row["_line"] = str(lineno)
            rows.append(row)
    return rows


def _number(row, key, path) -> float:
    try:
        x = float(row[key])
    except ValueError:
        raise MalformedStudy(f"{path}:{row['_line']}: {key} {row[key]!r} is not a number") from None
    if not math.isfinite(x):
        raise MalformedStudy(f"{path}:{row['_line']}: {key} must be finite")
    return x


def _integer(row, key, path) -> int:
    x = _number(row, key, path)
    if x != int(x):
        raise MalformedStudy(f"{path}:{row['_line']}: {key} must be an integer")
    return int(x)


def _arm_model_cov(pairs: list[tuple[str, str]], var: np.ndarray) -> np.ndarray | None:
    """Covariance of the listed contrasts under independent arms, with arm
    variances back-solved from the pairwise variances. ``None`` when the
    listed contrasts do not determine the arm variances."""
    arms = sorted({t for p in pairs for t in p})
    if len(pairs) < len(arms):
        return None
    M = np.zeros((len(pairs), len(arms)))
    for r, (u, v) in enumerate(pairs):
        M[r, arms.index(u)] = M[r, arms.index(v)] = 1.0
    if np.linalg.matrix_rank(M) < len(arms):
        return None
    s2, *_ = np.linalg.lstsq(M, var, rcond=None)
    if np.any(s2 < 0):
        return None
    D = np.zeros((len(pairs), len(arms)))
    for r, (u, v) in enumerate(pairs):
        D[r, arms.index(u)] = -1.0
        D[r, arms.index(v)] = 1.0
    return D @ np.diag(s2) @ D.T


def load_contrasts(contrast_csv, cov_csv=None, strict: bool = True) -> TreatmentNetwork:
    """Build a network from ``contrasts.csv`` and an optional ``cov.csv``.

    Multi-arm studies need every off-diagonal covariance between their listed
    contrasts. With ``strict=False`` missing entries of a study that lists all
    its pairwise contrasts are reconstructed from arm variances solved out of
    the pairwise variances; anything else is still an error.
    """
    rows = _read(contrast_csv, CONTRAST_HEADER)
    studies: OrderedDict[str, list] = OrderedDict()
    for r in rows:
        sid, a, b = r["study"], r["treat_a"], r["treat_b"]
        if not sid or not a or not b:
            raise MalformedStudy(f"{contrast_csv}:{r['_line']}: empty study or treatment field")
        if a == b:
            raise MalformedStudy(f"{contrast_csv}:{r['_line']}: treat_a equals treat_b")
        se = _number(r, "se", contrast_csv)
        if se <= 0:
            raise MalformedStudy(f"{contrast_csv}:{r['_line']}: se must be positive")
        recs = studies.setdefault(sid, [])
        if any({a, b} == {x, y} for x, y, *_ in recs):
            raise MalformedStudy(f"study {sid}: duplicate row for pair {a}:{b}")
        recs.append((a, b, _number(r, "effect", contrast_csv), se))

    given: dict[str, dict[tuple, float]] = {}
    if cov_csv is not None:
        for r in _read(cov_csv, COV_HEADER):
            sid = r["study"]
            where = f"{cov_csv}:{r['_line']}"
            if sid not in studies:
                raise MalformedStudy(f"{where}: unknown study {sid!r}")
            recs = studies[sid]
            pair_pos = {}
            for i, (a, b, _, _) in enumerate(recs):
                pair_pos[(a, b)] = (i, 1.0)
                pair_pos[(b, a)] = (i, -1.0)
            p1 = (r["pair1_a"], r["pair1_b"])
            p2 = (r["pair2_a"], r["pair2_b"])
            for p in (p1, p2):
                if p not in pair_pos:
                    raise MalformedStudy(f"{where}: pair {p[0]}:{p[1]} is not a contrast of study {sid}")
            (i, s1), (j, s2) = pair_pos[p1], pair_pos[p2]
            c = s1 * s2 * _number(r, "cov", cov_csv)
            if i == j:
                v = recs[i][3] ** 2
                if not math.isclose(c, v, rel_tol=1e-12, abs_tol=1e-15):
                    raise MalformedStudy(f"{where}: variance {c} disagrees with se^2 = {v}")
                continue
            key = (min(i, j), max(i, j))
            entries = given.setdefault(sid, {})
            if key in entries:
                raise MalformedStudy(f"{where}: duplicate covariance row")
            entries[key] = c

    blocks = []
    for sid, recs in studies.items():
        k = len(recs)
        cov = np.diag([se**2 for *_, se in recs])
        entries = given.get(sid, {})
        missing = [(i, j) for i in range(k) for j in range(i + 1, k) if (i, j) not in entries]
        for (i, j), c in entries.items():
            cov[i, j] = cov[j, i] = c
        if missing:
            if strict:
                raise MalformedStudy(
                    f"study {sid}: {len(missing)} within-study covariance(s) missing; supply cov rows"
                )
            model = _arm_model_cov([(a, b) for a, b, _, _ in recs], np.diag(cov).copy())
            if model is None:
                raise MalformedStudy(
                    f"study {sid}: covariances missing and not recoverable from the listed contrasts"
                )
            log.warning("study %s: %d covariance(s) reconstructed from arm variances", sid, len(missing))
            for i, j in missing:
                cov[i, j] = cov[j, i] = model[i, j]
        blocks.append(StudyBlock.from_oriented(sid, [(a, b, e) for a, b, e, _ in recs], cov))
    return TreatmentNetwork.from_studies(blocks)


def load_arms_binary(arm_csv, correction: float = 0.5) -> TreatmentNetwork:
    """Log odds ratios against each study's first-listed arm.

    When any arm of a study has a zero cell the correction is added to every
    cell of every arm in that study, so all contrasts share one baseline
    log-odds and the shared-arm covariance stays well defined.
    """
    if not correction >= 0:
        raise MalformedStudy("correction must be nonnegative")
    studies: OrderedDict[str, list] = OrderedDict()
    for r in _read(arm_csv, ARM_HEADER):
        sid, t = r["study"], r["treatment"]
        ev, n = _integer(r, "events", arm_csv), _integer(r, "total", arm_csv)
        if n <= 0:
            raise MalformedStudy(f"study {sid}: total must be positive")
        if ev < 0 or ev > n:
            raise MalformedStudy(f"study {sid}: events must lie in [0, total]")
        arms = studies.setdefault(sid, [])
        if any(t == x for x, _, _ in arms):
            raise MalformedStudy(f"study {sid}: treatment {t} listed twice")
        arms.append((t, ev, n))

    blocks = []
    for sid, arms in studies.items():
        if len(arms) < 2:
            raise MalformedStudy(f"study {sid}: needs at least two arms")
        c = correction if any(ev == 0 or ev == n for _, ev, n in arms) else 0.0
        logit, var = [], []
        for _, ev, n in arms:
            a, b = ev + c, n - ev + c
            if a == 0 or b == 0:
                raise MalformedStudy(f"study {sid}: zero cell with no continuity correction")
            logit.append(math.log(a / b))
            var.append(1.0 / a + 1.0 / b)
        base = arms[0][0]
        k = len(arms) - 1
        cov = np.full((k, k), var[0])
        cov[np.diag_indices(k)] += np.array(var[1:])
        rows = [(base, t, logit[j + 1] - logit[0]) for j, (t, _, _) in enumerate(arms[1:])]
        blocks.append(StudyBlock.from_oriented(sid, rows, cov, baseline=base if k > 1 else None))
    return TreatmentNetwork.from_studies(blocks)


def write_contrasts(net: TreatmentNetwork, contrast_csv, cov_csv) -> None:
    """Write ``net`` in the contrast/cov CSV layout; loading it back gives the same network."""
    with open(contrast_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTRAST_HEADER)
        for sb in net.studies:
            for (a, b), e, v in zip(sb.contrasts, sb.effects, np.diag(sb.cov)):
                w.writerow([sb.study_id, a, b, repr(float(e)), repr(math.sqrt(v))])
    with open(cov_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COV_HEADER)
        for sb in net.studies:
            k = len(sb.contrasts)
            for i in range(k):
                for j in range(i + 1, k):
                    (a1, b1), (a2, b2) = sb.contrasts[i], sb.contrasts[j]
                    w.writerow([sb.study_id, a1, b1, a2, b2, repr(float(sb.cov[i, j]))])


def full_block(sb: StudyBlock) -> StudyBlock:
    """Full pairwise form of a block (used to compare encodings)."""
    return embed_full(sb)[0]


def network_from_path(contrasts=None, cov=None, arms=None, strict: bool = True, correction: float = 0.5) -> TreatmentNetwork:
    if (contrasts is None) == (arms is None):
        raise MalformedStudy("give exactly one of a contrast file or an arm file")
    if arms is not None:
        return load_arms_binary(Path(arms), correction)
    return load_contrasts(Path(contrasts), None if cov is None else Path(cov), strict)
