"""Batch experiment runner.

Every subcommand reads a JSON config (``--config``), writes its artifacts
and a ``manifest.json`` into ``--out``, and exits with 0 on success, 2 on a
configuration error, 3 when a numerical check fails and 1 on any other
module error (a ``FAILED`` marker then names the subcommand).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable

import mpmath
import numpy as np
import scipy

from . import __version__
from .certificate import (
    HardyHypotheses, alpha_bound, improvement_certificate, propagate_hardy_constants,
    propagate_poincare_constants, sample_q,
)
from .curves import curve_infimum, curve_infimum_lagrangian
from .domain import DomainError, DomainSpec, build_domain, domain_summary, quasiconvexity_estimate
from .hardy import (
    alpha_table, beta_hardy_experiment, default_family, hardy_p_curve, make_corpus, make_family,
    poincare_ball_constant, pointwise_poincare_check, sample_points,
)
from .maximal import level_set_check, maximal, weak_type_check
from .weights import comparability_check, distance_power_weight, doubling_constant

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class CheckFailed(Exception):
    pass


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, mpmath.mpf):
        return float(obj)
    return obj


def write_json(path: Path, data: Any) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class Run:
    def __init__(self, config: dict, base: Path, out: Path, threads: int, seed: int):
        self.config = config
        self.base = base
        self.out = out
        self.threads = max(1, threads)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._domain = None

    def get(self, key: str, default: Any = None, required: bool = False):
        if key not in self.config:
            if required:
                raise ConfigError(f"missing config key {key!r}")
            return default
        return self.config[key]

    def number(self, key: str, default: float | None = None) -> float:
        v = self.get(key, default, required=default is None)
        try:
            return float(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r} must be a number") from exc

    def numbers(self, key: str, default: list | None = None) -> list[float]:
        v = self.get(key, default, required=default is None)
        if not isinstance(v, list) or not v:
            raise ConfigError(f"config key {key!r} must be a nonempty list")
        return [float(x) for x in v]

    @property
    def domain(self):
        if self._domain is None:
            spec = self.get("domain", required=True)
            if isinstance(spec, str):
                path = (self.base / spec) if not os.path.isabs(spec) else Path(spec)
                if not path.exists():
                    raise ConfigError(f"domain file not found: {path}")
                try:
                    spec = DomainSpec.load(path)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"invalid domain JSON: {exc}") from exc
            try:
                dom = build_domain(spec)
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
            qc_samples = int(self.get("qc_samples", 0))
            if qc_samples > 0:
                dom = dom.with_qc(quasiconvexity_estimate(dom, qc_samples, np.random.default_rng(self.seed)))
            self._domain = dom
        return self._domain

    def weight(self):
        beta = self.number("beta", 0.0)
        if beta < 0:
            raise ConfigError("beta must be >= 0")
        return distance_power_weight(self.domain, beta)

    def corpus(self):
        recipes = self.get("corpus", [{"recipe": "dist"}])
        return make_corpus(self.domain, recipes, validate=bool(self.get("validate_corpus", True)))

    def family(self):
        gens = self.get("family")
        rng = np.random.default_rng(self.seed)
        return default_family(self.domain, rng) if gens is None else make_family(self.domain, gens, rng)

    def points(self, count_key: str = "points", default: int = 8, min_dist: float = 0.0):
        explicit = self.get("cells")
        if explicit is not None:
            return np.asarray(explicit, dtype=int)
        return sample_points(self.domain, int(self.get(count_key, default)), np.random.default_rng(self.seed),
                             min_dist=min_dist)

    def pmap(self, fn: Callable, items: list) -> list:
        if self.threads == 1 or len(items) < 2:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_domain(run: Run) -> dict:
    dom = run.domain
    summary = domain_summary(dom)
    summary["qc_factor"] = quasiconvexity_estimate(dom, int(run.get("qc_samples", 32)),
                                                   np.random.default_rng(run.seed))
    write_json(run.out / "domain.json", {"spec": dom.spec.to_dict(), "summary": summary})
    dom.export_dist_csv(run.out / "dist.csv")
    return summary


def cmd_doubling(run: Run) -> dict:
    w = run.weight()
    kappa = run.number("kappa", 2.0)
    samples = int(run.get("samples", 200))
    rep = doubling_constant(w, kappa, samples, run.rng)
    write_json(run.out / "doubling.json", rep.to_json())
    r_min = run.get("r_min_cells")
    if r_min is not None:
        big = [s for s in rep.samples if s["r"] >= float(r_min) * run.domain.h]
        d_large = max((s["wB"] / s["wBhalf"] for s in big), default=None)
    else:
        d_large = None
    comp = comparability_check(run.domain, w.beta or 0.0, kappa, samples, run.rng)
    write_json(run.out / "comparability.json", comp.to_json())
    return {"d_hat": rep.d_hat, "d_hat_large_radii": d_large, "comparability": comp.to_json()}


def _field(run: Run) -> np.ndarray:
    spec = run.get("field", {"kind": "random"})
    dom = run.domain
    kind = spec.get("kind")
    if kind == "random":
        return run.rng.random(dom.shape)
    if kind == "constant":
        return np.full(dom.shape, float(spec.get("c", 1.0)))
    try:
        return make_family(dom, [spec], run.rng).fields[0]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_maxfn(run: Run) -> dict:
    dom = run.domain
    w = run.weight()
    f = _field(run)
    p = run.number("p", 1.0)
    kappa = run.number("kappa", 2.0)
    R = run.get("R")
    mf = maximal(f, p, w, kappa, R=float(R) if R is not None else None)
    coords = ["x", "y"][: dom.n]
    cells = list(map(tuple, dom.inside_cells()))
    write_csv(run.out / "maxfn.csv", [*coords, "value"],
              ([*dom.center(c).tolist(), float(mf[c])] for c in cells))
    reports = []
    samples = int(run.get("doubling_samples", 200))
    d5 = doubling_constant(w, 5 * kappa, samples, np.random.default_rng(run.seed)).d_hat
    for tau in run.numbers("tau", [0.5]):
        reports.append(weak_type_check(f, w, kappa, tau, d_hat=d5).to_json())
    if kappa > 1:
        d10 = doubling_constant(w, 10 * kappa, samples, np.random.default_rng(run.seed)).d_hat
        pts = run.points(default=4)
        for Lam in run.numbers("Lambda", [2.0]):
            for x in pts:
                reports.append(level_set_check(f, p, w, kappa, x, Lam, d_hat=d10).to_json())
    write_json(run.out / "checks.json", reports)
    failed = [r for r in reports if not r["pass"]]
    if failed:
        raise CheckFailed(f"{len(failed)} maximal-function checks failed")
    return {"max": float(mf[dom.inside].max()), "checks": len(reports)}


def cmd_curve(run: Run) -> dict:
    dom = run.domain
    nu = run.number("nu", 2.0)
    fam = run.family()
    pts = run.points(default=4)
    results = []
    for g, label in zip(fam.fields, fam.labels):
        for x in pts:
            exact = curve_infimum(dom, g, x, nu)
            lag = curve_infimum_lagrangian(dom, g, x, nu)
            ok = (lag.lower_bound <= exact.integral <= lag.integral) if exact.feasible else True
            results.append({"candidate": label, "label_setting": exact.to_json(),
                            "lagrangian": lag.to_json(), "sandwich_ok": ok})
    write_json(run.out / "curves.json", results)
    if not all(r["sandwich_ok"] for r in results):
        raise CheckFailed("Lagrangian sandwich violated")
    return {"queries": len(results)}


def cmd_hardy_scan(run: Run) -> dict:
    w = run.weight()
    corpus = run.corpus()
    kappa = run.number("kappa", 2.0)
    ps = run.numbers("p_grid", [1.2, 1.5, 2.0, 2.5, 3.0])
    rows = run.pmap(lambda p: hardy_p_curve(run.domain, w, [p], kappa, corpus)[0], ps)
    write_csv(run.out / "hardy_scan.csv", ["p", "constant"], rows)
    vals = [c for _, c in rows]
    monotone = all(a >= b for a, b in zip(vals, vals[1:])) if ps == sorted(ps) else None
    write_json(run.out / "hardy_scan.json", {"kappa": kappa, "beta": w.beta, "rows": rows,
                                             "nonincreasing": monotone,
                                             "corpus": [e.label for e in corpus]})
    if monotone is False:
        raise CheckFailed("measured C_H(p) is not nonincreasing")
    return {"rows": len(rows)}


def cmd_alpha(run: Run) -> dict:
    dom = run.domain
    w = run.weight()
    p = run.number("p", 2.0)
    nu = run.number("nu", 2.0)
    kappa = run.number("kappa", 2.0)
    fam = run.family()
    pts = run.points(default=6)
    table = alpha_table(dom, w, p, nu, kappa, fam, pts)
    taus = run.numbers("tau", [0.0, 0.25, 0.5, 1.0])
    rows = [(t, table.estimate(t)) for t in taus]
    write_csv(run.out / "alpha.csv", ["tau", "estimate"], rows)
    cap = nu * dom.qc_factor
    ok = all(e <= cap for _, e in rows)
    write_json(run.out / "alpha.json", {"p": p, "nu": nu, "kappa": kappa, "rows": rows, "cap": cap,
                                        "feasible_pairs": table.feasible_pairs, "lower_bound_only": True})
    if not ok:
        raise CheckFailed("alpha estimate exceeds nu * qc_factor")
    return {"rows": len(rows)}


def cmd_poincare(run: Run) -> dict:
    dom = run.domain
    w = run.weight()
    p = run.number("p", 1.0)
    lam = run.number("lambda", 1.0)
    corpus = run.corpus()
    samples = int(run.get("samples", 50))
    rep = poincare_ball_constant(dom, w, p, lam, corpus, samples, np.random.default_rng(run.seed))
    C_1 = rep.constant
    d_half = doubling_constant(w, 0.5, int(run.get("doubling_samples", 200)),
                               np.random.default_rng(run.seed)).d_hat
    checks = [
        dict(pointwise_poincare_check(dom, w, p, lam, e.u, e.g, C_1, d_half, samples,
                                      np.random.default_rng(run.seed)), label=e.label)
        for e in corpus
    ]
    C_2, C_A, kap, nu_min = propagate_poincare_constants(C_1, lam, d_half)
    out = {"ball_constant": rep.to_json(), "checks": checks,
           "propagated": {"C_2": float(C_2), "C_A": float(C_A), "kappa": float(kap), "nu_min": float(nu_min)}}
    write_json(run.out / "poincare.json", out)
    if not all(c["pass"] for c in checks):
        raise CheckFailed("pointwise Poincare check failed")
    return {"C_1": C_1}


def cmd_improve(run: Run) -> dict:
    hyp_cfg = run.get("hypotheses")
    if hyp_cfg is None:
        meas = run.get("measured", required=True)
        try:
            C_gamma, kap, nu_min = propagate_hardy_constants(meas["C_H"], meas["kappa_gamma"], meas.get("C_QC", 1))
            _, C_A, kap_a, nu_a = propagate_poincare_constants(meas["C_1"], meas.get("lambda", 1), meas["D_half"])
        except KeyError as exc:
            raise ConfigError(f"missing measured key {exc}") from exc
        hyp_cfg = {"p0": meas["p0"], "p": meas["p"], "C_gamma": C_gamma, "C_A": C_A,
                   "kappa": max(kap, kap_a), "nu": max(nu_min, nu_a) * 1.01, "D10k": meas["D10k"]}
    try:
        hyp = HardyHypotheses.from_dict(hyp_cfg)
        cert = improvement_certificate(hyp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data = cert.to_json(int(run.get("c_alpha_samples", 8)))
    taus = run.numbers("tau", [0.25, 0.5, 1.0])
    qs = sample_q(cert, [0.25, 0.5, 0.75])
    data["alpha_bounds"] = [
        {"q": float(q), "tau": t, "log10_bound": alpha_bound(cert, q, t).log10} for q in qs for t in taus
    ]
    write_json(run.out / "certificate.json", data)
    return {"k": cert.k, "log10_S": cert.log10_S}


def cmd_beta_experiment(run: Run) -> dict:
    beta = run.number("beta", 1.0)
    p = run.number("p", 2.0)
    corpus = run.corpus()
    rep = beta_hardy_experiment(run.domain, beta, p, corpus, run.number("kappa", 2.0))
    write_json(run.out / "beta_experiment.json", rep)
    return {"pointwise_beta_constant": rep["pointwise_beta_constant"], "integral_ratio": rep["integral_ratio"]}


COMMANDS: dict[str, Callable[[Run], dict]] = {
    "make-domain": cmd_make_domain,
    "doubling": cmd_doubling,
    "maxfn": cmd_maxfn,
    "curve": cmd_curve,
    "hardy-scan": cmd_hardy_scan,
    "alpha": cmd_alpha,
    "poincare": cmd_poincare,
    "improve": cmd_improve,
    "beta-experiment": cmd_beta_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardylab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def _manifest(command: str, config: dict, seed: int, status: str, result: Any) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "status": status,
        "result": result,
        "versions": {
            "hardylab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mpmath": mpmath.__version__,
            "python": platform.python_version(),
        },
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"{args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    if not 0 <= seed < 2**64:
        print(f"{args.command}: config error: seed must be a u64", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    run = Run(config, Path(args.config).resolve().parent, out, args.threads, seed)
    try:
        result = COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"{args.command}: config error: {exc}", file=sys.stderr)
        marker.write_text(f"{args.command}: config error: {exc}\n")
        write_json(out / "manifest.json", _manifest(args.command, config, seed, "config-error", str(exc)))
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"{args.command}: check failed: {exc}", file=sys.stderr)
        marker.write_text(f"{args.command}: check failed: {exc}\n")
        write_json(out / "manifest.json", _manifest(args.command, config, seed, "check-failed", str(exc)))
        return EXIT_CHECK
    except Exception as exc:  # noqa: BLE001 - reported with the subcommand name
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        marker.write_text(f"{args.command}: {type(exc).__name__}: {exc}\n{traceback.format_exc()}")
        write_json(out / "manifest.json", _manifest(args.command, config, seed, "error", repr(exc)))
        return EXIT_ERROR
    write_json(out / "manifest.json", _manifest(args.command, config, seed, "ok", result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
