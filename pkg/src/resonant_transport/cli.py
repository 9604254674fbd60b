"""``rtlab``: command-line runner for the classify / reduce / escape / evolve / dichotomy experiments.

Configs and reports are JSON with sorted keys; time series and profiles
are CSV.  Output goes to ``$RTL_OUTPUT_DIR`` if set, else to
``output.dir`` from the config (default ``rtl_output``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure or
regime mismatch.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .classical_dynamics import bracket_profile, build_escape, verify_escape
from .evolve import GrowthReport, dichotomy_experiment, instability_experiment, stability_experiment
from .exceptions import ConfigError, NotResonantlyStable, ResonantTransportError, WrongRegime
from .normal_form import flatness_report, normal_form_reduce
from .resonance import STABLE, UNSTABLE, classify, resonant_average
from .spectral import SpaceTimeField

log = logging.getLogger("rtlab")

SCHEMA_VERSION = 1
SUBCOMMANDS = ("classify", "reduce", "escape", "evolve", "dichotomy")

PRESETS = {
    # V = cos(x + t): <V>_1 = cos x, simple zeros at pi/2 and 3pi/2
    "resonant-cos": [{"k": 1, "l": 1, "re": 0.5, "im": 0.0}, {"k": -1, "l": -1, "re": 0.5, "im": 0.0}],
    # V = 2 + cos(x + t): <V>_1 = 2 + cos x > 0
    "stable-shifted-cos": [
        {"k": 0, "l": 0, "re": 2.0, "im": 0.0},
        {"k": 1, "l": 1, "re": 0.5, "im": 0.0},
        {"k": -1, "l": -1, "re": 0.5, "im": 0.0},
    ],
    # V = cos x: no resonant modes at m = 1, so <V>_1 = 0
    "nonresonant-cos": [{"k": 1, "l": 0, "re": 0.5, "im": 0.0}, {"k": -1, "l": 0, "re": 0.5, "im": 0.0}],
    # V = 1 + cos(x + t): <V>_1 = 1 + cos x has a double zero at pi
    "degenerate-tangent": [
        {"k": 0, "l": 0, "re": 1.0, "im": 0.0},
        {"k": 1, "l": 1, "re": 0.5, "im": 0.0},
        {"k": -1, "l": -1, "re": 0.5, "im": 0.0},
    ],
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "m": 1,
    "epsilon": 0.1,
    "V": "resonant-cos",
    "s": [1],
    "solver": {"K": None, "dt": None, "T": None, "scheme": "cayley-midpoint", "horizon_factor": 1.0},
    "normal_form": {"N": 1},
    "escape": {"sigma": 0.01},
    "datum": {"xi0": 40},
    "seeds": {"regularize": 0},
    "sweep": {"epsilon": []},
    "output": {"dir": "rtl_output"},
}

# regime-dependent solver defaults, used when solver.K / solver.T are null
UNSTABLE_K, STABLE_K = 16384, 64
UNSTABLE_T = 200.0


def load_schema():
    text = resources.files("resonant_transport").joinpath("schemas/config.schema.v1.json").read_text()
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj):
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved run configuration (a thin wrapper over its JSON)."""

    data: dict

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        merged = _merge(DEFAULTS, raw)
        try:
            jsonschema.validate(merged, load_schema())
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
        V = merged["V"]
        merged["V_modes"] = copy.deepcopy(PRESETS[V]) if isinstance(V, str) else copy.deepcopy(V)
        return cls(merged)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def to_json(self):
        return dumps(self.data)

    def with_epsilon(self, eps):
        return ExperimentConfig.from_dict(_merge(self.data, {"epsilon": float(eps), "sweep": {"epsilon": []}}))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def field(self) -> SpaceTimeField:
        return SpaceTimeField.from_mode_list(self.data["V_modes"])


def output_root(cfg: ExperimentConfig):
    return Path(os.environ.get("RTL_OUTPUT_DIR") or cfg["output"]["dir"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# subcommands: each returns the report dict and writes its artifacts into out
# ---------------------------------------------------------------------------

def run_classify(cfg, out):
    report = classify(cfg.field, cfg["m"]).to_dict()
    (out / "classify.json").write_text(dumps(report))
    return report


def run_reduce(cfg, out):
    chain = normal_form_reduce(cfg.field, cfg["m"], cfg["epsilon"], cfg["normal_form"]["N"])
    try:
        flat = flatness_report(chain.X_eff)
    except NotResonantlyStable as exc:
        flat = {"error": str(exc)}
    report = {"chain": chain.to_dict(), "flatness": flat}
    (out / "reduce.json").write_text(dumps(report))
    return report


def run_escape(cfg, out):
    X = resonant_average(cfg.field, cfg["m"])
    E = build_escape(X, cfg["escape"]["sigma"])
    min_g, W = verify_escape(E, X)
    x, g, a = bracket_profile(E.a_tilde, X)
    _write_csv(out / "escape_profile.csv", ["x", "g", "a_tilde"], zip(x, g, a))
    report = E.to_dict()
    report.update({"min_g": min_g, "W_verified": [list(w) for w in W]})
    (out / "escape.json").write_text(dumps(report))
    return report


def run_evolve(cfg, out):
    V, m, eps = cfg.field, cfg["m"], cfg["epsilon"]
    solver = cfg["solver"]
    verdict = classify(V, m).verdict
    s_list = tuple(cfg["s"])
    if verdict == STABLE:
        res = stability_experiment(
            V,
            m,
            eps,
            N=cfg["normal_form"]["N"],
            s_list=s_list,
            horizon_factor=solver["horizon_factor"],
            K=solver["K"] or STABLE_K,
            dt=solver["dt"],
            return_trajectory=True,
        )
        traj = res.pop("trajectory", None)
        rows = traj.norm_rows() if traj is not None else []
        report = {"regime": verdict, "stability": res}
    elif verdict == UNSTABLE:
        rep: GrowthReport = instability_experiment(
            V,
            m,
            eps,
            s=s_list[0],
            T=solver["T"] or UNSTABLE_T,
            xi0=cfg["datum"]["xi0"],
            K=solver["K"] or UNSTABLE_K,
            dt=solver["dt"],
            sigma=cfg["escape"]["sigma"],
        )
        rows = [(t, rep.s, v) for t, v in zip(rep.norm_times, rep.norm_values)]
        report = {"regime": verdict, "growth_report": rep.to_dict()}
        _write_csv(out / "virial.csv", ["t", "A"], rep.virial_series)
    else:
        raise WrongRegime(f"evolve needs a Stable or Unstable field; classify returned {verdict}")
    _write_csv(out / "norms.csv", ["t", "s", "norm"], rows)
    (out / "evolve.json").write_text(dumps(report))
    return report


def run_dichotomy(cfg, out):
    solver = cfg["solver"]
    Vs = SpaceTimeField.from_mode_list(PRESETS["stable-shifted-cos"])
    Vu = SpaceTimeField.from_mode_list(PRESETS["resonant-cos"])
    report = dichotomy_experiment(
        Vs,
        Vu,
        cfg["m"],
        cfg["epsilon"],
        s=cfg["s"][0],
        xi0=cfg["datum"]["xi0"],
        K=solver["K"] or UNSTABLE_K,
        dt=solver["dt"],
        sigma=cfg["escape"]["sigma"],
        T=solver["T"] or UNSTABLE_T,
    )
    (out / "dichotomy.json").write_text(dumps(report))
    return report


RUNNERS = {
    "classify": run_classify,
    "reduce": run_reduce,
    "escape": run_escape,
    "evolve": run_evolve,
    "dichotomy": run_dichotomy,
}


def run(subcommand, cfg: ExperimentConfig, out_dir=None):
    """Run one subcommand; writes ``config.resolved.json`` next to the report."""
    if subcommand not in RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    out = Path(out_dir) if out_dir is not None else output_root(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(cfg.to_json())
    return RUNNERS[subcommand](cfg, out)


def _sweep_point(args):
    subcommand, cfg_json, out_dir = args
    return run(subcommand, ExperimentConfig.from_json(cfg_json), out_dir)


def run_sweep(subcommand, cfg: ExperimentConfig, jobs=1):
    """Run every ``sweep.epsilon`` point in its own ``eps_<value>`` directory."""
    root = output_root(cfg)
    points = [
        (subcommand, cfg.with_epsilon(e).to_json(), str(root / f"eps_{float(e)!r}")) for e in cfg["sweep"]["epsilon"]
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_sweep_point, points))
    else:
        reports = [_sweep_point(p) for p in points]
    root.mkdir(parents=True, exist_ok=True)
    summary = {f"{float(e)!r}": r for e, r in zip(cfg["sweep"]["epsilon"], reports)}
    (root / f"{subcommand}_sweep.json").write_text(dumps(summary))
    return summary


def _summary_line(subcommand, report):
    if subcommand == "classify":
        return f"verdict={report['verdict']} zeros={[round(z['x0'], 6) for z in report['zeros']]}"
    if subcommand == "reduce":
        return f"remainder_l2={report['chain']['remainder_l2']:.3e} flatness={report['flatness'].get('flatness')}"
    if subcommand == "escape":
        return f"delta_verified={report['delta_verified']:.6f} W={report['W_region']}"
    if subcommand == "evolve":
        if "growth_report" in report:
            g = report["growth_report"]
            return f"gamma_fit={g['gamma_fit']:.6f} predicted={g['predicted_rate']:.6f}"
        return f"sup_ratio={report['stability']['sup_ratio']}"
    if subcommand == "dichotomy":
        return f"gamma_stable={report['gamma_stable']:.3e} gamma_unstable={report['gamma_unstable']:.3e}"
    return ""


def build_parser():
    p = argparse.ArgumentParser(prog="rtlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="named potential (overrides config V)")
        sp.add_argument("--m", type=int)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--output-dir", help="output root (RTL_OUTPUT_DIR still wins)")
        sp.add_argument("--jobs", type=int, default=1, help="workers for sweep.epsilon points")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args):
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {args.config}: {exc}") from exc
    if args.preset:
        raw["V"] = args.preset
    if args.m is not None:
        raw["m"] = args.m
    if args.epsilon is not None:
        raw["epsilon"] = args.epsilon
    if args.output_dir:
        raw.setdefault("output", {})
        raw["output"]["dir"] = args.output_dir
    return ExperimentConfig.from_dict(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        if args.print_config:
            sys.stdout.write(cfg.to_json())
            return 0
        if cfg["sweep"]["epsilon"]:
            summary = run_sweep(args.subcommand, cfg, jobs=max(1, args.jobs))
            for eps, rep in summary.items():
                print(f"{args.subcommand} eps={eps}: {_summary_line(args.subcommand, rep)}")
        else:
            report = run(args.subcommand, cfg)
            print(f"{args.subcommand}: {_summary_line(args.subcommand, report)} -> {output_root(cfg)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ResonantTransportError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
