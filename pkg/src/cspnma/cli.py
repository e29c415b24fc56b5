"""Command-line interface.

Exit codes: 0 success, 2 data error, 3 numerical failure, 64 usage error.
Errors go to stderr as one JSON object ``{"error": CODE, "kind": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import plotting, report
from .canonical import decompose
from .diagnostics import baseline_targets, forest, q_test, tension
from .errors import CspNmaError
from .ingest import network_from_path
from .model import HeterogeneitySpec, assemble_system, estimate_tau2
from .projection import fit, resolve_target

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64
RENDER_KINDS = ("forest", "tension", "paths")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _probability(text):
    x = float(text)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return x


def _nonneg(text):
    x = float(text)
    if not x >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return x


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    src = p.add_argument_group("input")
    src.add_argument("--contrasts", type=Path, help="contrast-level CSV")
    src.add_argument("--cov", type=Path, help="within-study covariance CSV")
    src.add_argument("--arms", type=Path, help="arm-level binary-outcome CSV")
    src.add_argument("--correction", type=_nonneg, default=0.5, help="zero-cell continuity correction")
    src.add_argument("--strict-cov", dest="strict_cov", action=argparse.BooleanOptionalAction, default=True,
                     help="refuse multi-arm studies with missing covariances (default on)")
    het = p.add_mutually_exclusive_group()
    het.add_argument("--tau2", type=_nonneg, help="fixed between-study variance")
    het.add_argument("--estimate-tau2", action="store_true", help="moment estimate of tau2")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--target", action="append", metavar="A:B", help="target comparison (repeatable)")
    p.add_argument("--baseline", help="baseline treatment for tension output")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--format", choices=("json", "csv", "svg"), default="json")
    p.add_argument("--top-n-paths", type=int, metavar="N", help="show only the N heaviest paths")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="cspnma", description="Contrast-space network meta-analysis with canonical decomposition")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fit", parents=[common], help="all-pairs estimates -> fit.json")
    sub.add_parser("decompose", parents=[common], help="direct/indirect decomposition -> decomposition.json/.csv")
    sub.add_parser("paths", parents=[common], help="indirect path listing -> paths.json")
    sub.add_parser("qtest", parents=[common], help="global inconsistency test -> q.json")
    r = sub.add_parser("render", parents=[common], help="SVG figure with JSON sidecar")
    r.add_argument("kind", help="forest | tension | paths")
    sub.add_parser("tau2", parents=[common], help="moment estimate of tau2 -> tau2.json")
    return parser


def _threads() -> int:
    raw = os.environ.get("CSPNMA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CSPNMA_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


class Run:
    """Loaded network, fitted system and the shared pieces every subcommand needs."""

    def __init__(self, args):
        if args.top_n_paths is not None and args.top_n_paths < 0:
            raise UsageError("--top-n-paths must be nonnegative")
        if args.contrasts is None and args.arms is None:
            raise UsageError("one of --contrasts or --arms is required")
        if args.contrasts is not None and args.arms is not None:
            raise UsageError("--contrasts and --arms are mutually exclusive")
        self.args = args
        self.dataset = (args.contrasts or args.arms).stem
        self.net = network_from_path(args.contrasts, args.cov, args.arms, args.strict_cov, args.correction)
        if args.estimate_tau2:
            het = HeterogeneitySpec.estimated()
        elif args.tau2 is not None:
            het = HeterogeneitySpec.given(args.tau2)
        else:
            het = HeterogeneitySpec.fixed()
        self.sys = assemble_system(self.net, het)
        self.op, self.fit = fit(self.sys)
        self.q = q_test(self.fit, self.sys)

    def targets(self, default_all=True):
        labels = self.sys.labels
        if self.args.target:
            idx = [resolve_target(self.sys, t) for t in self.args.target]
            return [(labels[a], labels[b]) for a, b in idx]
        if not default_all:
            return None
        return [(labels[c.low], labels[c.high]) for c in self.sys.contrast_index]

    def decompose_all(self, targets):
        n = _threads()
        if n == 1 or len(targets) < 2:
            return [decompose(self.op, self.sys, t) for t in targets]
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(lambda t: decompose(self.op, self.sys, t), targets))


def cmd_fit(run: Run) -> int:
    doc = report.fit_doc(run.sys, run.fit, run.q, run.args.alpha, run.dataset, run.targets())
    _write(run.args.out / "fit.json", report.dumps(doc))
    if run.args.format == "csv":
        _write(run.args.out / "fit.csv", report.fit_csv(doc))
    print(f"fit: {len(doc['estimates'])} comparisons, T={doc['T']}, rank(V)={doc['rank_v']}, mode={doc['mode']}")
    return EXIT_OK


def cmd_decompose(run: Run) -> int:
    decs = run.decompose_all(run.targets())
    doc = report.decomposition_doc(decs, run.q, run.dataset, run.args.top_n_paths)
    out = run.args.out
    _write(out / "decomposition.json", report.dumps(doc))
    _write(out / "decomposition.csv", report.decomposition_csv(doc))
    _write(out / "decomposition_long.csv", report.long_csv(doc))
    print(f"decompose: {len(decs)} targets")
    return EXIT_OK


def cmd_paths(run: Run) -> int:
    decs = run.decompose_all(run.targets())
    doc = report.paths_doc(decs, run.args.top_n_paths)
    _write(run.args.out / "paths.json", report.dumps(doc))
    if run.args.format == "svg":
        for dec in decs:
            _render(run.args.out, f"paths_{_safe(dec.target[0])}-{_safe(dec.target[1])}",
                    plotting.paths_doc(dec, run.args.top_n_paths))
    sys.stdout.write(report.paths_text(doc))
    return EXIT_OK


def cmd_qtest(run: Run) -> int:
    _write(run.args.out / "q.json", report.dumps(report.q_block(run.q, run.dataset)))
    print(report.q_line(run.q))
    return EXIT_OK


def cmd_tau2(run: Run) -> int:
    tau2 = estimate_tau2(run.net)
    doc = {"dataset": run.dataset, "method": "moment", "tau2": tau2, "q_fixed": None, "df": None}
    fixed = assemble_system(run.net)
    _, ffit = fit(fixed)
    qf = q_test(ffit, fixed)
    doc["q_fixed"], doc["df"] = qf.q, qf.df
    _write(run.args.out / "tau2.json", report.dumps(doc))
    print(f"tau2={tau2:.6g}")
    return EXIT_OK


def _render(out: Path, stem: str, doc: dict) -> None:
    _write(out / f"{stem}.json", report.dumps(doc))
    _write(out / f"{stem}.svg", plotting.render_svg(doc))


def cmd_render(run: Run, kind: str) -> int:
    out, alpha = run.args.out, run.args.alpha
    if kind == "tension":
        base = run.args.baseline or run.sys.labels[0]
        targets = baseline_targets(run.sys.labels, base)
        rows = tension(run.decompose_all(targets), alpha)
        _render(out, f"tension_{_safe(base)}", plotting.tension_doc(rows, base, alpha))
        print(f"render: tension for baseline {base}")
        return EXIT_OK
    decs = run.decompose_all(run.targets())
    for dec in decs:
        stem = f"{kind}_{_safe(dec.target[0])}-{_safe(dec.target[1])}"
        if kind == "forest":
            _render(out, stem, plotting.forest_doc(forest(dec, alpha), dec.target, alpha))
        else:
            _render(out, stem, plotting.paths_doc(dec, run.args.top_n_paths))
    print(f"render: {len(decs)} {kind} figure(s)")
    return EXIT_OK


def _fail(code: str, kind: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "kind": kind, "message": message}) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "render" and args.kind not in RENDER_KINDS:
            raise UsageError(f"unknown render kind {args.kind!r}; choose from {', '.join(RENDER_KINDS)}")
        run = Run(args)
        if args.command == "render":
            return cmd_render(run, args.kind)
        return {"fit": cmd_fit, "decompose": cmd_decompose, "paths": cmd_paths,
                "qtest": cmd_qtest, "tau2": cmd_tau2}[args.command](run)
    except UsageError as e:
        return _fail("UsageError", "usage", str(e), EXIT_USAGE)
    except CspNmaError as e:
        return _fail(e.code, e.kind, str(e), EXIT_NUMERICAL if e.kind == "numerical" else EXIT_DATA)
    except OSError as e:
        return _fail("IOError", "data", str(e), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
