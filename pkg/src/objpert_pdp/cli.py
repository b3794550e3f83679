"""``pdp`` command line.

Exit codes: 0 ok, 1 usage, 2 numeric failure, 3 precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .accounting import expost_pdp_members
from .errors import NumericFailure, PdpError, PreconditionFailure
from .glm import DataPoint, GlmLoss, normalize, read_csv, write_csv
from .oracle import privacy_risk_demo
from .release import resolve_tau
from .report import (
    ADAPTIVE,
    DATA_DEP,
    DATASET,
    DOMAIN,
    MODES,
    PrivacyReport,
    build_report,
    evaluate_report,
    release_noise_for_budget,
    uniform_report_pad,
)
from .solver import PerturbedModel
from . import suites

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PRECONDITION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _split(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad budget split {text!r}") from exc
    if len(parts) not in (3, 4) or any(not p > 0 for p in parts):
        raise argparse.ArgumentTypeError("split needs 3 or 4 positive numbers: eps1,eps2,eps3[,eps4]")
    return parts


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _write_rows(rows: list[dict], path: str | None) -> None:
    if not rows:
        return
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    finally:
        if path:
            fh.close()


def _load_data(path: str, loss_kind: str, no_normalize: bool):
    D = read_csv(path)
    if no_normalize:
        return D
    return normalize(D, clip_labels=(loss_kind == "squared"))


def cmd_gen(a) -> int:
    D, _ = ex.generate(a.kind, a.n, a.d, np.random.default_rng(a.seed))
    write_csv(D, a.out)
    return EXIT_OK


def _noise_for(a, d: int) -> tuple[dict, object]:
    split = a.split
    eps4 = split[3] if len(split) == 4 else split[2]
    noise = release_noise_for_budget(GlmLoss(a.loss), split[1], split[2], a.rho, eps4)
    tau = resolve_tau(d, a.rho, a.tau_source, a.tau_file)
    return noise, tau


def cmd_train(a) -> int:
    D = _load_data(a.data, a.loss, a.no_normalize)
    floor = 0.0
    if a.report_mode == DATA_DEP:
        noise, tau = _noise_for(a, D.d)
        floor = 2 * noise["sigma3"] * tau.value
    model, spec = ex.train(
        D, a.loss, a.eps, a.delta, a.inflate, np.random.default_rng(a.seed),
        seed=a.seed, lam_floor=floor, sigma=a.sigma, lam=a.lam,
    )
    model.save(a.out)
    return EXIT_OK


def cmd_report(a) -> int:
    model = PerturbedModel.load(a.model)
    a.loss = model.loss_kind
    D = _load_data(a.data, model.loss_kind, a.no_normalize)
    spec = model.spec
    kw = {}
    if a.mode != "data_indep":
        noise, tau = _noise_for(a, D.d)
        kw = dict(sigma2=noise["sigma2"], sigma3=noise["sigma3"], sigma4=noise.get("sigma4"), tau=tau)
        if a.mode != ADAPTIVE:
            kw.pop("sigma4")
    report = build_report(
        model, spec, D, a.mode, a.rho, np.random.default_rng(a.seed),
        delta_release=a.delta_release, **kw,
    )
    if a.uniform == "dataset":
        report = uniform_report_pad(report, DATASET, D.n)
    elif a.uniform == "domain":
        report = uniform_report_pad(report, DOMAIN, D.d)
    report.save(a.out)
    if a.csv:
        truth = expost_pdp_members(model, spec, D) if a.with_ground_truth else None
        rows = _eval_rows(report, [D.point(i) for i in range(D.n)], truth)
        if a.query:
            Q = _load_data(a.query, model.loss_kind, a.no_normalize)
            rows += [dict(r, idx=f"q{r['idx']}") for r in _eval_rows(report, Q.points(), None)]
        _write_rows(rows, a.csv)
        if a.with_ground_truth:
            Path(a.csv + ".NOT_PUBLISHABLE").write_text(
                "this CSV contains ground-truth columns computed from the raw data\n"
            )
    return EXIT_OK


def _eval_rows(report: PrivacyReport, points: list[DataPoint], truth) -> list[dict]:
    rows = []
    for i, z in enumerate(points):
        ev = evaluate_report(report, z)
        row = {
            "idx": i,
            "eps1_bar": ev.eps1_bar,
            "eps2": ev.eps2,
            "eps3": ev.eps3,
            "eps4": ev.eps4,
            "term1": ev.term1,
            "term2": ev.term2,
            "term3": ev.term3,
        }
        if truth is not None:
            row["eps1_true"] = float(truth[i])
            row["ratio"] = ev.eps1_bar / float(truth[i]) if truth[i] > 0 else math.inf
        rows.append(row)
    return rows


def cmd_eval(a) -> int:
    report = PrivacyReport.load(a.report)
    Q = read_csv(a.data)
    _write_rows(_eval_rows(report, Q.points(), None), a.out)
    return EXIT_OK


def cmd_experiment(a) -> int:
    eps = a.split[:3] if a.split else (a.eps, a.eps, a.eps)
    cfg = ex.ExperimentConfig(
        loss_kind=a.loss, n=a.n, d=a.d, eps=eps, delta=a.delta, rho=a.rho,
        inflation=a.inflate, seed=a.seed, reps=a.reps, n_test=a.n_test,
        tau_source=a.tau_source, tau_file=a.tau_file, values=a.values or (),
    )
    summary = None
    if a.kind == "lambda_sweep":
        rows = ex.lambda_sweep(cfg)
    elif a.kind == "pdp_hist":
        rows, summary = ex.pdp_hist(cfg)
    elif a.kind == "budget_sweep":
        rows = ex.budget_sweep(cfg)
    elif a.kind == "vary_n":
        rows = ex.vary_n(cfg)
    else:
        rows = ex.vary_d(cfg)
    _write_rows(rows, a.out)
    if summary is not None:
        text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
        if a.summary:
            Path(a.summary).write_text(text)
        else:
            sys.stderr.write(text)
    return EXIT_OK


def cmd_oracle(a) -> int:
    names = suites.SUITES if a.suite == "all" else (a.suite,)
    ok = True
    for name in names:
        res = suites.run(name, a.seed)
        print(f"{name}: residual={res.residual:.3e} tolerance={res.tolerance:.1e} {'PASS' if res.passed else 'FAIL'}")
        ok &= res.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_demo(a) -> int:
    rng = np.random.default_rng(a.seed)
    hits = 0
    for _ in range(a.trials):
        q = int(rng.integers(0, a.max_count + 1)) if a.q is None else a.q
        out = privacy_risk_demo(q, a.sigma, rng)
        hits += out.recovered_q == q
        if a.trials == 1 or a.verbose:
            print(f"Q(D)={q} o={out.o:.6f} eps={out.eps_published:.6f} recovered={out.recovered_q}"
                  + (" (ambiguous)" if out.ambiguous else ""))
    print(f"recovered {hits}/{a.trials}")
    return EXIT_OK if hits == a.trials else EXIT_NUMERIC


def _common(p, *, eps=True, rho=True):
    p.add_argument("--seed", type=int, default=0)
    if eps:
        p.add_argument("--eps", type=float, default=1.0, help="budget for the model release")
        p.add_argument("--delta", type=float, default=1e-6)
    if rho:
        p.add_argument("--rho", type=float, default=1e-6, help="failure probability of the report")
        p.add_argument("--split", type=_split, default=(1.0, 1.0, 1.0), help="eps1,eps2,eps3[,eps4]")
        p.add_argument("--tau-source", default="auto", choices=("auto", "table", "monte_carlo", "asymptotic"))
        p.add_argument("--tau-file", default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--kind", choices=("linear", "logistic"), default="logistic")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--out", required=True)
    _common(g, eps=False, rho=False)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="calibrate, perturb and solve")
    t.add_argument("--data", required=True)
    t.add_argument("--loss", choices=("logistic", "squared"), default="logistic")
    t.add_argument("--inflate", type=float, default=1.0)
    t.add_argument("--sigma", type=float, default=None, help="explicit noise scale (no DP calibration)")
    t.add_argument("--lam", type=float, default=None, help="explicit lambda, required with --sigma")
    t.add_argument("--report-mode", choices=("none", DATA_DEP), default="none",
                   help="raise lambda to what a data-dependent report needs")
    t.add_argument("--no-normalize", action="store_true")
    t.add_argument("--out", required=True)
    _common(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="build and evaluate a privacy report")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--mode", choices=MODES, default="data_indep")
    r.add_argument("--delta-release", type=float, default=None, help="delta for eps2/eps3/eps4 (default rho)")
    r.add_argument("--uniform", choices=("none", "dataset", "domain"), default="none")
    r.add_argument("--query", default=None, help="extra points to evaluate")
    r.add_argument("--with-ground-truth", action="store_true",
                   help="add true eps1 from raw data; output is then NOT publishable")
    r.add_argument("--no-normalize", action="store_true")
    r.add_argument("--out", required=True)
    r.add_argument("--csv", default=None)
    _common(r, eps=False)
    r.set_defaults(func=cmd_report)

    e = sub.add_parser("eval", help="evaluate a published report on given points")
    e.add_argument("--report", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a sweep and emit plot-ready CSV")
    x.add_argument("kind", choices=("lambda_sweep", "pdp_hist", "budget_sweep", "vary_n", "vary_d"))
    x.add_argument("--loss", choices=("logistic", "squared"), default="logistic")
    x.add_argument("--n", type=int, default=1000)
    x.add_argument("--d", type=int, default=20)
    x.add_argument("--inflate", type=float, default=1.0)
    x.add_argument("--reps", type=int, default=1)
    x.add_argument("--n-test", type=int, default=2000)
    x.add_argument("--values", type=_ints, default=None, help="n or d values for vary_n/vary_d")
    x.add_argument("--out", default=None)
    x.add_argument("--summary", default=None)
    _common(x)
    x.set_defaults(func=cmd_experiment, split=None)

    o = sub.add_parser("oracle", help="run the independent verification suites")
    o.add_argument("suite", choices=suites.SUITES + ("all",))
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    m = sub.add_parser("demo", help="recover a count from its published ex-post pDP")
    m.add_argument("--q", type=int, default=None)
    m.add_argument("--sigma", type=float, default=2.0)
    m.add_argument("--trials", type=int, default=1)
    m.add_argument("--max-count", type=int, default=1000)
    m.add_argument("--verbose", action="store_true")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"pdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        if isinstance(exc, PdpError):
            raise
        print(f"pdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"pdp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PreconditionFailure as exc:
        print(f"pdp: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
