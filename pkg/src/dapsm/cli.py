"""Command-line entry point: ``dapsm match``, ``dapsm balance`` and ``dapsm simulate``.

Exit codes: 0 success, 1 usage or schema error, 2 numerical failure,
3 no weight balanced the observed covariates.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import shlex
import sys
from importlib import resources
from typing import List, Optional, Sequence

import numpy as np

from . import __version__, comparators
from .balance import balance_report
from .daps import DEFAULT_W_GRID, DapsConfig, DapsProblem, MatchedSet, dapsm
from .data import Dataset, parse_csv
from .errors import DapsmError, InputError, NoBalancedWeightError, NumericalError
from .estimation import att_diff_means, att_linear_adjusted
from .simulation import SimulationConfig, records_csv, run_monte_carlo, summary_csv, summary_json

log = logging.getLogger("dapsm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_NO_BALANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def header_block(command: str, argv: Sequence[str], inputs: dict, seed) -> str:
    lines = [f"# dapsm {__version__}", f"# command: {command}",
             f"# argv: {shlex.join(['dapsm', command, *argv])}"]
    for name, digest in inputs.items():
        lines.append(f"# input_sha256[{name}]: {digest}")
    lines.append(f"# seed: {seed}")
    return "\n".join(lines) + "\n"


def _write(path: str, header: str, body: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        fh.write(body)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "NA" if np.isnan(v) else repr(float(v))
    return str(v)


def _rows_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _read_input(path: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path} is not valid UTF-8") from None
    return parse_csv(text), _sha256(raw)


# --- match -----------------------------------------------------------------

def _parse_w(value: str):
    if value == "auto":
        return None
    try:
        w = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("--w must be 'auto' or a number in [0, 1]") from None
    if not 0 <= w <= 1:
        raise argparse.ArgumentTypeError("--w must lie in [0, 1]")
    return w


def _positive(value: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _quantile(value: str) -> float:
    v = _positive(value)
    if not v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _canonical_match_argv(args) -> List[str]:
    argv = [args.input, "--out-dir", args.out_dir, "--method", args.method,
            "--w", args.w_raw, "--w-method", args.w_method, "--cutoff", repr(args.cutoff),
            "--caliper-type", args.caliper_type, "--distance-scheme", args.distance_scheme,
            "--algorithm", args.algorithm, "--seed", str(args.seed)]
    if args.caliper is not None:
        argv += ["--caliper", repr(args.caliper)]
    if args.distance_quantile is not None:
        argv += ["--distance-quantile", repr(args.distance_quantile)]
    if args.estimate is not None:
        argv += ["--estimate", args.estimate]
    if args.sensitivity:
        argv.append("--sensitivity")
    return argv


def _estimate_rows(ds: Dataset, matched: MatchedSet, spec: Optional[str]):
    if spec is None or ds.y is None or matched.n_pairs == 0:
        return []
    names = [] if spec.strip().lower() == "none" else [s.strip() for s in spec.split(",") if s.strip()]
    for nm in names:
        ds.covariate(nm)
    rows = [att_diff_means(ds, matched), att_linear_adjusted(ds, matched, [])]
    if names:
        adj = att_linear_adjusted(ds, matched, names)
        rows.append(adj)
    return [(e.method, ";".join(names) if e.method == "linear-adjusted" and k == 2 else "",
             e.estimate, e.standard_error, e.ci_lower, e.ci_upper, e.n_pairs, e.level,
             int(e.degenerate)) for k, e in enumerate(rows)]


def _sensitivity_rows(prob: DapsProblem, ds: Dataset, cutoff: float):
    rows = []
    for w in DEFAULT_W_GRID:
        point, matched = prob.evaluate(float(w), cutoff)
        est = att_diff_means(ds, matched).estimate if (ds.y is not None and matched.n_pairs) else float("nan")
        rows.append((float(w), matched.n_pairs, point.max_asdm, int(point.balanced), est))
    return rows


def cmd_match(args) -> int:
    ds, digest = _read_input(args.input)
    if not ds.covariate_names:
        raise InputError("no covariate columns (prefix 'x_') in input")
    os.makedirs(args.out_dir, exist_ok=True)
    header = header_block("match", _canonical_match_argv(args), {"input": digest}, args.seed)
    outputs = {}

    t_rows, c_rows = ds.treated_idx, ds.control_idx
    selection = None
    if args.method == "dapsm":
        config = DapsConfig(w=args.w, caliper=args.caliper, caliper_type=args.caliper_type,
                            distance_scheme=args.distance_scheme, algorithm=args.algorithm,
                            w_method=args.w_method, asdm_cutoff=args.cutoff)
        try:
            res = dapsm(ds, config)
        except NoBalancedWeightError as exc:
            body = _rows_csv(["w", "max_asdm", "balanced", "n_pairs"],
                             [(p.w, p.max_asdm, int(p.balanced), p.n_pairs) for p in exc.trajectory])
            path = os.path.join(args.out_dir, "trajectory.csv")
            _write(path, header, body)
            sys.stderr.write(body)
            raise
        matched, selection, w = res.matched, res.w_selection, res.w
        ps, raw = res.ps, res.raw_distance
        cost = res.matrix.cost
        ps_diff = res.matrix.ps_diff
        if args.sensitivity:
            prob = DapsProblem(ds, config, fit=res.fit, ps=res.ps, raw_distance=raw)
            outputs["sensitivity.csv"] = _rows_csv(
                ["w", "n_pairs", "max_asdm", "balanced", "estimate"],
                _sensitivity_rows(prob, ds, args.cutoff))
    else:
        if args.method == "distance-caliper" and args.distance_quantile is None:
            raise UsageError("--distance-quantile is required for --method distance-caliper")
        spec = comparators.ComparatorSpec(
            kind=args.method, ps_caliper=args.caliper,
            distance_quantile=args.distance_quantile if args.method == "distance-caliper" else None)
        matched = comparators.run_comparator(spec, ds)
        _, ps = comparators.fitted_ps(ds, with_coordinates=args.method == "naive-coords")
        raw = comparators.treated_control_distances(ds)
        ps_diff = np.abs(ps[t_rows][:, None] - ps[c_rows][None, :])
        cost = ps_diff
        w = 1.0

    t_pos = {int(r): k for k, r in enumerate(t_rows)}
    c_pos = {int(r): k for k, r in enumerate(c_rows)}
    dist_col = "distance_km" if ds.metric == "geodesic" else "distance"
    pair_rows = []
    for t, c in matched.pairs:
        i, j = t_pos[int(t)], c_pos[int(c)]
        pair_rows.append((ds.ids[t], ds.ids[c], cost[i, j], ps_diff[i, j], raw[i, j]))
    outputs["pairs.csv"] = _rows_csv(["treated_id", "control_id", "daps", "ps_diff", dist_col], pair_rows)
    outputs["dropped.csv"] = _rows_csv(["treated_id"], [(ds.ids[t],) for t in matched.dropped_treated])
    outputs["balance.csv"] = balance_report(ds, matched, args.cutoff).to_csv()
    summary = [("method", args.method), ("w", w), ("n_treated", t_rows.size),
               ("n_control", c_rows.size), ("n_pairs", matched.n_pairs),
               ("n_dropped", matched.dropped_treated.size), ("total_cost", matched.total_cost),
               ("mean_pair_distance", matched.mean_pair_distance)]
    if selection is not None:
        summary.append(("w_method", selection.method))
        outputs["trajectory.csv"] = _rows_csv(
            ["w", "max_asdm", "balanced", "n_pairs"],
            [(p.w, p.max_asdm, int(p.balanced), p.n_pairs) for p in selection.trajectory])
    outputs["summary.csv"] = _rows_csv(["key", "value"], summary)
    est_rows = _estimate_rows(ds, matched, args.estimate)
    if est_rows:
        outputs["estimate.csv"] = _rows_csv(
            ["method", "covariates", "estimate", "se", "ci_lower", "ci_upper", "n_pairs", "level",
             "degenerate"], est_rows)

    for name, body in outputs.items():
        _write(os.path.join(args.out_dir, name), header, body)
    print(f"method={args.method} w={_fmt(float(w))} pairs={matched.n_pairs} "
          f"dropped={matched.dropped_treated.size} out={args.out_dir}")
    return EXIT_OK


# --- balance ---------------------------------------------------------------

def read_pairs(path: str, ds: Dataset) -> MatchedSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = [ln for ln in raw.decode("utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    index = {str(u): k for k, u in enumerate(ds.ids)}
    pairs = []
    if lines:
        reader = csv.DictReader(lines)
        if not {"treated_id", "control_id"} <= set(reader.fieldnames or []):
            raise InputError("pairs file needs treated_id and control_id columns")
        for rownum, row in enumerate(reader, start=1):
            t, c = row["treated_id"].strip(), row["control_id"].strip()
            for ident in (t, c):
                if ident not in index:
                    raise InputError(f"pairs row {rownum}: unknown id {ident!r}")
            ti, ci = index[t], index[c]
            if ds.z[ti] != 1 or ds.z[ci] != 0:
                raise InputError(f"pairs row {rownum}: ({t}, {c}) is not a treated-control pair")
            pairs.append((ti, ci))
    arr = np.array(pairs, dtype=int).reshape(-1, 2)
    return MatchedSet(pairs=arr, dropped_treated=np.setdiff1d(ds.treated_idx, arr[:, 0]),
                      total_cost=float("nan"), mean_pair_distance=float("nan"))


def cmd_balance(args) -> int:
    ds, digest = _read_input(args.input)
    try:
        with open(args.pairs, "rb") as fh:
            pairs_digest = _sha256(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {args.pairs}: {exc}") from None
    matched = read_pairs(args.pairs, ds)
    covs = None if args.covariates is None else [c.strip() for c in args.covariates.split(",")]
    report = balance_report(ds, matched, args.cutoff, covariates=covs)
    argv = [args.input, args.pairs, "--cutoff", repr(args.cutoff), "--out", args.out]
    if args.covariates is not None:
        argv += ["--covariates", args.covariates]
    header = header_block("balance", argv, {"input": digest, "pairs": pairs_digest}, "none")
    _write(args.out, header, report.to_csv())
    after = "NA" if report.matched_empty else str(report.n_imbalanced_after)
    print(f"pairs={report.n_pairs} imbalanced_before={report.n_imbalanced_before} "
          f"imbalanced_after={after} out={args.out}")
    return EXIT_OK


# --- simulate --------------------------------------------------------------

def default_config_text() -> str:
    return resources.files("dapsm").joinpath("data/default_simulation.json").read_text("utf-8")


def cmd_simulate(args) -> int:
    if args.config in (None, "default"):
        text = default_config_text()
    else:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    if args.seed is not None:
        raw["base_seed"] = args.seed
    if args.replicates is not None:
        raw["n_replicates"] = args.replicates
    if args.jobs is not None:
        raw["n_jobs"] = args.jobs
    try:
        config = SimulationConfig.from_dict(raw)
    except (InputError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None

    os.makedirs(args.out_dir, exist_ok=True)
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    argv = [args.config or "default", "--out-dir", args.out_dir, "--seed", str(config.base_seed),
            "--replicates", str(config.n_replicates), "--jobs", str(config.n_jobs)]
    if args.records:
        argv.append("--records")
    header = header_block("simulate", argv, {"config": _sha256(canonical.encode())}, config.base_seed)

    done = [0]
    total = len(config.cells()) * config.n_replicates

    def progress(_):
        done[0] += 1
        log.info("replicate %d/%d", done[0], total)

    result = run_monte_carlo(config, progress=progress)
    _write(os.path.join(args.out_dir, "summary.csv"), header, summary_csv(result.summary))
    with open(os.path.join(args.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(summary_json(result))
    if args.records:
        _write(os.path.join(args.out_dir, "records.csv"), header,
               records_csv(result.records, config.balance_covariates))
    print(f"cells={len(config.cells())} replicates={config.n_replicates} "
          f"methods={len(config.methods)} out={args.out_dir}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dapsm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dapsm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("match", help="match treated to control units and report balance")
    m.add_argument("input")
    m.add_argument("--out-dir", default="dapsm_out")
    m.add_argument("--method", choices=["dapsm", "naive", "naive-coords", "distance-caliper"],
                   default="dapsm")
    m.add_argument("--w", dest="w_raw", default="auto")
    m.add_argument("--w-method", choices=["grid", "bisection"], default="grid")
    m.add_argument("--cutoff", type=_positive, default=0.15)
    m.add_argument("--caliper", type=_positive, default=None)
    m.add_argument("--caliper-type", choices=["daps", "ps", "distance"], default="daps")
    m.add_argument("--distance-scheme", choices=["minmax", "ecdf"], default="minmax")
    m.add_argument("--algorithm", choices=["greedy", "optimal"], default="optimal")
    m.add_argument("--distance-quantile", type=_quantile, default=None)
    m.add_argument("--estimate", default=None,
                   help="'none' or comma-separated covariates for the adjusted model")
    m.add_argument("--sensitivity", action="store_true",
                   help="also write balance and estimate for every w on the default grid")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_match)

    b = sub.add_parser("balance", help="balance report for an existing pairs file")
    b.add_argument("input")
    b.add_argument("pairs")
    b.add_argument("--cutoff", type=_positive, default=0.15)
    b.add_argument("--covariates", default=None)
    b.add_argument("--out", default="balance.csv")
    b.set_defaults(func=cmd_balance)

    s = sub.add_parser("simulate", help="run the Monte Carlo comparison")
    s.add_argument("config", nargs="?", default=None,
                   help="JSON config file (omit or 'default' for the bundled one)")
    s.add_argument("--out-dir", default="dapsm_sim")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--records", action="store_true", help="also dump per-replicate records")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "match":
        try:
            args.w = _parse_w(args.w_raw)
        except argparse.ArgumentTypeError as exc:
            parser.error(str(exc))
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"dapsm: usage error: {exc}\n")
        return EXIT_USAGE
    except NoBalancedWeightError as exc:
        sys.stderr.write(f"dapsm: {exc}\n")
        return EXIT_NO_BALANCE
    except NumericalError as exc:
        sys.stderr.write(f"dapsm: numerical error: {exc}\n")
        return EXIT_NUMERICAL
    except (InputError, DapsmError) as exc:
        sys.stderr.write(f"dapsm: input error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
