"""JSON and CSV documents for fits, decompositions, paths and Q tests.

Floats are written with ``repr`` precision (json does this already); ``-0.0``
is normalized so that byte output does not depend on the sign of zero.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .canonical import CanonicalDecomposition, aggregate
from .diagnostics import QResult, z_value
from .model import ContrastSystem
from .projection import NmaFit

ARROW = "→"


def clean(x):
    """Recursively turn numpy scalars/arrays into plain JSON values."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("non-finite value in report")
        return 0.0 if x == 0 else x
    return x


def dumps(doc) -> str:
    return json.dumps(clean(doc), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def target_str(target) -> str:
    return f"{target[0]}:{target[1]}"


def q_block(q: QResult, dataset: str | None = None) -> dict:
    return {
        "dataset": dataset,
        "T": q.T,
        "rank_v": q.rank_v,
        "q": q.q,
        "df": q.df,
        "p_value": q.p_value,
        "flags": list(q.flags),
    }


def q_line(q: QResult) -> str:
    return f"Q={q.q:.4f}, df={q.df}, p={q.p_value:.4f}"


def fit_doc(sys: ContrastSystem, fit: NmaFit, q: QResult, alpha: float, dataset: str | None = None, targets=None) -> dict:
    z = z_value(alpha)
    if targets is None:
        targets = [(sys.labels[c.low], sys.labels[c.high]) for c in sys.contrast_index]
    est = []
    for t in targets:
        e, v = fit.estimate(sys, t), fit.variance(sys, t)
        se = math.sqrt(max(v, 0.0))
        est.append({
            "target": target_str(t),
            "estimate": e,
            "variance": v,
            "se": se,
            "ci_low": e - z * se,
            "ci_high": e + z * se,
        })
    return {
        "dataset": dataset,
        "mode": fit.mode,
        "tau2": fit.tau2,
        "alpha": alpha,
        "T": sys.T,
        "treatments": list(sys.labels),
        "n_studies": len(sys.studies),
        "rank_v": q.rank_v,
        "estimates": est,
        "q": q_block(q, dataset),
    }


def fit_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target", "estimate", "se", "ci_low", "ci_high"])
    for e in doc["estimates"]:
        w.writerow([e["target"], f"{e['estimate']:.4f}", f"{e['se']:.4f}", f"{e['ci_low']:.4f}", f"{e['ci_high']:.4f}"])
    return _fix_zero(buf.getvalue())


def _fix_zero(text: str) -> str:
    # "-0.0000" after rounding reads as a sign where there is none
    return text.replace(",-0.0000", ",0.0000")


def decomposition_rows(dec: CanonicalDecomposition) -> list[dict]:
    rows = []
    for c in dec.direct:
        rows.append({
            "type": "Dir",
            "studies": c.study_id,
            "path": ARROW.join(dec.target),
            "weight": c.direct_weight,
            "estimate": c.observed,
            "variance": c.sigma2,
            "contribution": c.direct_value,
        })
    for p in dec.paths:
        rows.append({
            "type": "Ind",
            "studies": "/".join(p.segment_studies),
            "path": p.arrow(),
            "weight": p.weight,
            "estimate": p.delta,
            "variance": p.variance,
            "contribution": p.contribution,
        })
    return rows


def decomposition_doc(decs, q: QResult, dataset: str | None = None, top_n: int | None = None) -> dict:
    targets = []
    for dec in decs:
        agg = aggregate(dec)
        rows = decomposition_rows(dec)
        n_dir = len(dec.direct)
        shown = rows if top_n is None else rows[: n_dir + top_n]
        targets.append({
            "target": target_str(dec.target),
            "estimate": dec.theta_hat,
            "variance": dec.var_nma,
            "w_dir": agg.w_dir,
            "w_ind": agg.w_ind,
            "theta_dir": agg.theta_dir,
            "theta_ind": agg.theta_ind,
            "var_dir": agg.var_dir,
            "var_ind": agg.var_ind,
            "independence_approximate": agg.independence_approximate,
            "weight_sum": math.fsum(r["weight"] for r in rows),
            "normalization_error": dec.normalization_error,
            "reconstruction_error": dec.reconstruction_error,
            "residual_mass": dec.residual_mass,
            "n_paths": len(dec.paths),
            "n_paths_shown": len(shown) - n_dir,
            "truncated": len(shown) < len(rows),
            "rows": shown,
        })
    return {"dataset": dataset, "top_n_paths": top_n, "q": q_block(q, dataset), "targets": targets}


def decomposition_csv(doc: dict) -> str:
    buf = io.StringIO()
    truncated = [t for t in doc["targets"] if t["truncated"]]
    if truncated:
        buf.write(
            f"# indirect paths truncated to the top {doc['top_n_paths']} per target for display; "
            "weights are normalized over the full path set\n"
        )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target", "type", "studies", "path", "weight"])
    for t in doc["targets"]:
        for r in t["rows"]:
            w.writerow([t["target"], r["type"], r["studies"], r["path"], f"{r['weight']:.4f}"])
    return buf.getvalue()


def long_csv(doc: dict) -> str:
    """Target/source/weight triples: the tabular stand-in for a 3-D weight chart."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target", "source", "weight"])
    for t in doc["targets"]:
        for r in t["rows"]:
            source = r["studies"] if r["type"] == "Dir" else f"{r['studies']} {r['path']}"
            w.writerow([t["target"], source, repr(clean(r["weight"]))])
    return buf.getvalue()


def paths_doc(decs, top_n: int | None = None) -> dict:
    out = []
    for dec in decs:
        paths = dec.paths if top_n is None else dec.paths[:top_n]
        out.append({
            "target": target_str(dec.target),
            "w_dir": dec.w_dir,
            "direct": [{"study": c.study_id, "weight": c.direct_weight} for c in dec.direct],
            "paths": [
                {
                    "nodes": list(p.nodes),
                    "studies": list(p.segment_studies),
                    "weight": p.weight,
                    "delta": p.delta,
                    "variance": p.variance,
                }
                for p in paths
            ],
            "n_paths": len(dec.paths),
        })
    return {"top_n_paths": top_n, "targets": out}


def paths_text(doc: dict) -> str:
    lines = []
    for t in doc["targets"]:
        lines.append(f"{t['target']}  direct {t['w_dir']:.4f}")
        for p in t["paths"]:
            lines.append(f"  {p['weight']:.4f}  {ARROW.join(p['nodes'])}  ({'/'.join(p['studies'])})")
    return "\n".join(lines) + "\n"
