"""Config-driven experiment runner.

A config is a flat ``key = value`` document: one assignment per line, ``#``
comments, values written as JSON literals (``3``, ``0.5``, ``[1, 2]``,
``"power-law"``) or bare words (read as strings). Command-line flags override
file keys. Each run writes ``<experiment>.csv`` and ``<experiment>.manifest.json``
into the output directory (``--out``, else ``$SURROLAB_OUT``, else ``.``).

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, hypercube, linreg, mc_engine, spectra
from .mc_engine import RunPlan
from .tables import write_csv

EXPERIMENTS = (
    "spectra",
    "linreg-decompose",
    "linreg-bound",
    "linreg-uc-probe",
    "hypercube-risk",
    "hypercube-surrogate",
    "hypercube-ddcurve",
    "hypercube-adversary",
)

OUT_ENV = "SURROLAB_OUT"


class ConfigError(ValueError):
    pass


_REQUIRED = object()


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _int_list(v):
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise TypeError("expected a non-empty list of integers")
    return v


def _float_list(v):
    if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise TypeError("expected a non-empty list of numbers")
    return [float(x) for x in v]


# key -> (converter, default, range check or None)
_COMMON = {
    "seed": (_int, 0, lambda v: 0 <= v < 2**64),
    "replicates": (_int, 1000, lambda v: v >= 1),
    "parallelism": (_int, 1, lambda v: v >= 1),
}
_SPECTRUM = {
    "family": (_str, "isotropic", lambda v: v in spectra.FAMILIES),
    "alpha": (_float, 1.0, lambda v: v > 0),
    "gamma": (_float, 2.0, lambda v: v > 0),
    "spike": (_float, 10.0, lambda v: v > 0),
    "spike_count": (_int, 1, lambda v: v >= 0),
    "tail": (_float, 1.0, lambda v: v > 0),
    "tail_exponent": (_float, 0.0, lambda v: v >= 0),
    "values": (_float_list, None, lambda v: all(x > 0 for x in v)),
    "d_scale": (_float, 1.0, lambda v: v > 0),
    "d_power": (_float, 1.0, None),
}
_REGRESSION = {
    "sigma": (_float, 1.0, lambda v: v >= 0),
    "beta": (_str, "e1", lambda v: v in ("zero", "e1", "flat")),
    "beta_norm": (_float, 1.0, lambda v: v >= 0),
    "tol": (_float, linreg.DEFAULT_TOL, lambda v: 0 < v < 1),
}
_CONSTANTS = {
    "b": (_float, 1.0, lambda v: v > 0),
    "C": (_float, 1.0, lambda v: v > 0),
    "c": (_float, 1.0, lambda v: v > 0),
}

SCHEMAS = {
    "spectra": {**_SPECTRUM, "d": (_int, None, lambda v: v >= 1),
                "n_grid": (_int_list, _REQUIRED, lambda v: all(x >= 1 for x in v)),
                "b": _CONSTANTS["b"]},
    "linreg-decompose": {**_COMMON, **_SPECTRUM, **_REGRESSION,
                         "n": (_int, _REQUIRED, lambda v: v >= 1), "d": (_int, None, lambda v: v >= 1),
                         "replicates": (_int, 100, lambda v: v >= 1)},
    "linreg-bound": {**_SPECTRUM, **_REGRESSION, **_CONSTANTS, "d": (_int, None, lambda v: v >= 1),
                     "n_grid": (_int_list, _REQUIRED, lambda v: all(x >= 1 for x in v))},
    "linreg-uc-probe": {**_COMMON, **_SPECTRUM, **_REGRESSION,
                        "n": (_int, _REQUIRED, lambda v: v >= 1), "d": (_int, None, lambda v: v >= 2)},
    "hypercube-risk": {**_COMMON, "d": (_int, _REQUIRED, lambda v: v >= 1), "n": (_int, _REQUIRED, lambda v: v >= 1)},
    "hypercube-surrogate": {**_COMMON, "d": (_int, _REQUIRED, lambda v: v >= 1),
                            "n": (_int, _REQUIRED, lambda v: v >= 1), "k": (_int, None, lambda v: v >= 0)},
    "hypercube-ddcurve": {"n": (_int, _REQUIRED, lambda v: v >= 1), "d_min": (_int, 1, lambda v: v >= 1),
                          "d_max": (_int, _REQUIRED, lambda v: v >= 1), "eps": (_float, 0.1, lambda v: v > 0)},
    "hypercube-adversary": {**_COMMON, "d": (_int, _REQUIRED, lambda v: v >= 1),
                            "n": (_int, _REQUIRED, lambda v: v >= 1)},
}
# closed-form experiments accept (and ignore) a thread count so that any run can
# be repeated with the same flags
for _schema in SCHEMAS.values():
    _schema.setdefault("parallelism", _COMMON["parallelism"])


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_document(text: str) -> dict:
    """Flat ``key = value`` lines to a dict; duplicate keys are an error."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(c in key for c in "[]{} "):
            raise ConfigError(f"line {lineno}: invalid key {key!r} (config must be flat)")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


def validate(experiment: str, raw: dict) -> ExperimentConfig:
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}; valid ids: {', '.join(EXPERIMENTS)}")
    schema = SCHEMAS[experiment]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} for experiment {experiment!r}")
    params = {}
    for key, (conv, default, check) in schema.items():
        if key not in raw:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            params[key] = default
            continue
        try:
            value = conv(raw[key])
        except TypeError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from None
        if check is not None and not check(value):
            raise ConfigError(f"key {key!r}: value {raw[key]!r} out of range")
        params[key] = value
    _cross_checks(experiment, params)
    return ExperimentConfig(experiment, params)


def _cross_checks(experiment, p):
    if experiment in ("hypercube-surrogate",) and p["k"] is not None and p["k"] > 2 * p["d"]:
        raise ConfigError(f"key 'k': value {p['k']} out of range [0, 2d = {2 * p['d']}]")
    if experiment == "hypercube-adversary" and p["n"] > 2 ** (2 * p["d"] - 1):
        raise ConfigError("key 'n': must satisfy n <= 2^(2d-1)")
    if experiment == "hypercube-ddcurve" and p["d_max"] < p["d_min"]:
        raise ConfigError("key 'd_max': must be >= d_min")
    if "n_grid" in p and any(b <= a for a, b in zip(p["n_grid"], p["n_grid"][1:])):
        raise ConfigError("key 'n_grid': must be strictly increasing")
    if "family" in p:
        if p["family"] == "explicit" and p["values"] is None:
            raise ConfigError("missing required key 'values' for explicit family")
        if p["family"] != "explicit" and experiment in ("linreg-decompose", "linreg-uc-probe") and p["d"] is None:
            raise ConfigError("missing required key 'd'")
    if experiment == "linreg-uc-probe":
        d = len(p["values"]) if p["family"] == "explicit" else p["d"]
        if d <= p["n"]:
            raise ConfigError("key 'd': the flip probe needs d > n")


def _from_manifest(text: str) -> dict:
    man = json.loads(text)
    raw = {k: v for k, v in man["params"].items() if v is not None}
    raw["experiment"] = man["experiment"]
    return raw


def parse_config(text: str, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config document, applying defaults and overrides.

    A run manifest (JSON, as written by :func:`run_experiment`) is also accepted,
    so any run can be repeated from its manifest alone.
    """
    if text.lstrip().startswith("{"):
        try:
            raw = _from_manifest(text)
        except (json.JSONDecodeError, KeyError, AttributeError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from None
    else:
        raw = parse_document(text)
    doc_exp = raw.pop("experiment", None)
    if experiment is None:
        experiment = doc_exp
    elif doc_exp is not None and doc_exp != experiment:
        raise ConfigError(f"config is for {doc_exp!r}, not {experiment!r}")
    if experiment is None:
        raise ConfigError(f"no experiment given; valid ids: {', '.join(EXPERIMENTS)}")
    raw.update(overrides or {})
    return validate(experiment, raw)


def _family(p) -> spectra.SpectrumFamily:
    dim = spectra.DimensionRule(fixed=p["d"]) if p.get("d") is not None else \
        spectra.DimensionRule(scale=p["d_scale"], power=p["d_power"])
    return spectra.SpectrumFamily(
        kind=p["family"], dimension=dim, alpha=p["alpha"], gamma=p["gamma"], spike=p["spike"],
        spike_count=p["spike_count"], tail=p["tail"], tail_exponent=p["tail_exponent"],
        values=tuple(p["values"] or ()),
    )


def _instance(p, n) -> linreg.RegressionInstance:
    spec = spectra.make_spectrum(_family(p), n)
    beta = linreg.make_beta(p["beta"], spec.d, p["beta_norm"])
    return linreg.RegressionInstance(spec, beta, p["sigma"], n)


def _plan(p) -> RunPlan:
    return RunPlan(p["seed"], p["replicates"], p["parallelism"])


def _run_spectra(p, notes):
    rows = spectra.benign_summary(_family(p), p["n_grid"], p["b"])
    for r in rows:
        if r.kstar is None:
            notes.append(f"n={r.n}: no critical index in the finite spectrum; row flagged")
    return spectra.BENIGN_HEADER, spectra.benign_rows_as_records(rows), {}


DECOMP_HEADER = ("replicate", "term_emp_gap", "term_risk_gap", "term_surr_gen", "LD_hat", "LS_hat",
                 "identity_residual")


def _run_decompose(p, notes):
    inst = _instance(p, p["n"])
    tol = p["tol"]

    def one(seed):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", linreg.DegenerateDesignWarning)
            s = linreg.sample_design(inst, seed)
            t = linreg.surrogate_decomposition(s, inst, tol)
            bh = linreg.min_norm_interpolator(s.X, s.Y, tol)
        ld, ls = linreg.population_risk(bh, inst), linreg.empirical_risk(bh, s.X, s.Y)
        return t, ld, ls, linreg.identity_residual(t, ld, ls, inst), bool(caught)

    results = mc_engine.map_replicates(one, _plan(p))
    rows = []
    for i, (t, ld, ls, res, flagged) in enumerate(results):
        if flagged or t.rank_deficient:
            notes.append(f"replicate {i}: rank-deficient design")
        rows.append((i, t.term_empirical_gap, t.term_risk_gap, t.term_surrogate_gen, ld, ls, res))
    return DECOMP_HEADER, rows, {"max_identity_residual": max(r[-1] for r in rows)}


BOUND_HEADER = ("n", "d", "sigma", "kstar", "bound_total", "bound_sgc_term", "bound_variance_term")


def _run_bound(p, notes):
    rows = []
    for n in p["n_grid"]:
        inst = _instance(p, n)
        sgc = linreg.sgc_surrogate_bound(inst, p["C"])
        k = spectra.critical_index(inst.spectrum, n, p["b"])
        if k is None:
            notes.append(f"n={n}: no critical index; bound undefined")
            rows.append((n, inst.d, inst.sigma, None, None, sgc, None))
            continue
        var = linreg.variance_bound_term(inst, p["c"], p["b"])
        rows.append((n, inst.d, inst.sigma, k, inst.sigma**2 + sgc + var, sgc, var))
    return BOUND_HEADER, rows, {"C": p["C"], "c": p["c"], "b": p["b"]}


UC_HEADER = ("replicate", "LD_flip", "LS_flip", "gap")


def _run_uc_probe(p, notes):
    inst = _instance(p, p["n"])

    def one(seed):
        s = linreg.sample_design(inst, seed)
        f = linreg.flip_adversary(s, inst.beta)
        b = linreg.min_norm_interpolator(f.X, f.Y, p["tol"])
        ld, ls = linreg.population_risk(b, inst), linreg.empirical_risk(b, s.X, s.Y)
        return ld, ls, abs(ld - ls)

    vals = mc_engine.map_replicates(one, _plan(p))
    est = mc_engine.summarize([v[2] for v in vals], p["seed"])
    return UC_HEADER, [(i, *v) for i, v in enumerate(vals)], {"gap_mean": est.mean, "gap_stderr": est.stderr}


RISK_HEADER = ("replicate", "exact_risk", "emp_risk_S", "emp_risk_Sbar")


def _run_hc_risk(p, notes):
    inst = hypercube.HypercubeInstance(p["d"], p["n"])

    def one(seed):
        S = hypercube.sample_dataset(inst, seed)
        return (hypercube.exact_risk_learned(S), hypercube.empirical_risk_on(S, S),
                hypercube.empirical_risk_on(hypercube.antipodal_dataset(S), S), hypercube.slice_fraction(S))

    vals = mc_engine.map_replicates(one, _plan(p))
    extra = {"mean_slice_fraction": math.fsum(v[3] for v in vals) / len(vals)}
    return RISK_HEADER, [(i, *v[:3]) for i, v in enumerate(vals)], extra


SURR_HEADER = ("k", "LS_bound", "LSbar_bound", "LS_mc", "LS_mc_se", "LSbar_mc", "LSbar_mc_se")


def _run_hc_surrogate(p, notes):
    d = p["d"]
    S = hypercube.sample_dataset(hypercube.HypercubeInstance(d, p["n"]), p["seed"])
    ks = [p["k"]] if p["k"] is not None else list(range(2 * d + 1))
    rows = []
    for k in ks:
        ls_b, lsbar_b, _ = hypercube.surrogate_risk_bounds(S, k)
        on_s, on_sbar = hypercube.surrogate_empirical_risk_mc(
            S, k, p["replicates"], mc_engine.derive_seed(p["seed"], k + 1), p["parallelism"])
        rows.append((k, ls_b, lsbar_b, on_s.mean, on_s.stderr, on_sbar.mean, on_sbar.stderr))
    if 2 * d in ks:
        notes.append("k = 2d uses the empty-suffix convention: the empty suffix is equal and complementary to itself")
    return SURR_HEADER, rows, {"dataset_seed": p["seed"], "slice_fraction": hypercube.slice_fraction(S)}


def _run_hc_ddcurve(p, notes):
    eps = p["eps"]
    rows = hypercube.double_descent_curve(
        p["n"], range(p["d_min"], p["d_max"] + 1), lambda n, d: hypercube.theorem_k_rule(n, d, eps))
    return hypercube.DD_HEADER, hypercube.dd_rows_as_records(rows), {
        "k_rule": f"ceil((1+{eps!r})*log2(n) + log2(d)/2)", "vc_bound_form": "min(1, sqrt(2v(ln(2n/v)+1)/n))"}


ADV_HEADER = ("replicate", "exact_risk", "emp_risk_S", "gap")


def _run_hc_adversary(p, notes):
    inst = hypercube.HypercubeInstance(p["d"], p["n"])

    def one(seed):
        S = hypercube.sample_dataset(inst, seed)
        Sbar = hypercube.antipodal_dataset(S)
        risk, emp = hypercube.exact_risk_learned(Sbar), hypercube.empirical_risk_on(S, Sbar)
        return risk, emp, abs(risk - emp)

    vals = mc_engine.map_replicates(one, _plan(p))
    est = mc_engine.summarize([v[2] for v in vals], p["seed"])
    return ADV_HEADER, [(i, *v) for i, v in enumerate(vals)], {"gap_mean": est.mean, "gap_stderr": est.stderr}


_RUNNERS = {
    "spectra": _run_spectra,
    "linreg-decompose": _run_decompose,
    "linreg-bound": _run_bound,
    "linreg-uc-probe": _run_uc_probe,
    "hypercube-risk": _run_hc_risk,
    "hypercube-surrogate": _run_hc_surrogate,
    "hypercube-ddcurve": _run_hc_ddcurve,
    "hypercube-adversary": _run_hc_adversary,
}


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[Path, Path]:
    """Run one experiment; returns the CSV and manifest paths.

    Numerical conditions (rank deficiency, missing critical index) do not fail
    the run; they are listed under ``warnings`` in the manifest.
    """
    out_dir = Path(out_dir if out_dir is not None else os.environ.get(OUT_ENV, "."))
    notes: list[str] = []
    t0 = time.perf_counter()
    header, rows, summary = _RUNNERS[config.experiment](config.params, notes)
    wall = time.perf_counter() - t0
    csv_path = write_csv(out_dir / f"{config.experiment}.csv", header, rows)
    manifest = {
        "experiment": config.experiment,
        "params": {k: _jsonable(v) for k, v in config.params.items()},
        "seed": config.params.get("seed"),
        "replicates": config.params.get("replicates"),
        "rows": len(rows),
        "summary": {k: _jsonable(v) for k, v in summary.items()},
        "warnings": notes,
        "versions": {"surrolab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_time_s": wall,
    }
    man_path = out_dir / f"{config.experiment}.manifest.json"
    with open(man_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, man_path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surrolab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"surrolab {__version__}")
    sub = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT", parser_class=_Parser)
    sub.required = True
    for exp in EXPERIMENTS:
        sp = sub.add_parser(exp, help=f"run the {exp} experiment")
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or .)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicates", type=int)
        sp.add_argument("--parallelism", type=int)
        sp.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"surrolab: cannot read config: {exc}", file=sys.stderr)
        return 1
    overrides = {}
    for item in args.sets:
        if "=" not in item:
            print(f"surrolab: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 1
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value.strip())
    for key in ("seed", "replicates", "parallelism"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    try:
        config = parse_config(text, args.experiment, overrides)
    except ConfigError as exc:
        print(f"surrolab: config error: {exc}", file=sys.stderr)
        return 1
    try:
        csv_path, man_path = run_experiment(config, args.out)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"surrolab: {config.experiment} failed: {exc}", file=sys.stderr)
        return 2
    print(csv_path)
    print(man_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
