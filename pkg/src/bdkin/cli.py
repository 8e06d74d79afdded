"""Command-line driver: ``bdkin {simulate,equilibrium,classify,validate}``.

Every subcommand reads a JSON scenario, either a file path or the stem of
a built-in scenario, prints its JSON report on standard output and writes
it (plus any time series) to the output directory.

Exit codes: 0 ok, 1 error, 2 monitor violation or failed check,
3 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .equilibrium import classify, minimizing_sequence, solve_equilibrium, standard_equilibrium
from .errors import BDKinError, NumericError
from .integrate import IntegratorConfig, simulate, step_invariant_report
from .kinetics import ModifiedModel, StandardModel, model_from_config, validate_assumptions
from .longtime import RegimeBudget, mass_certificate, regime_classify
from .state import ClusterState

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3
DEFAULT_OUT = "bdkin_out"


class ConfigError(BDKinError):
    """Malformed or inconsistent scenario configuration."""


def _schema(name: str) -> dict:
    text = resources.files("bdkin").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def builtin_scenarios() -> list[str]:
    folder = resources.files("bdkin").joinpath("scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_scenario(ref: str) -> tuple[dict, str]:
    """Read a scenario from a file, falling back to a built-in of the same stem."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        stem = path.name[:-5] if path.name.endswith(".json") else path.name
        if stem not in builtin_scenarios():
            raise ConfigError(f"no such scenario file or built-in scenario: {ref}")
        text = resources.files("bdkin").joinpath("scenarios", f"{stem}.json").read_text()
        path = Path(stem + ".json")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {ref}: {exc}") from None
    validate_scenario(cfg)
    return cfg, cfg.get("name", path.stem)


def validate_scenario(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("scenario must be a JSON object")
    m = cfg.get("model", {}).get("truncation") if isinstance(cfg.get("model"), dict) else None
    if isinstance(m, int) and m < 2:
        raise ConfigError(f"truncation must be ≥ 2 (got {m})")
    try:
        jsonschema.validate(cfg, _schema("scenario"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid scenario at {where}: {exc.message}") from None


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _emit(report: dict, schema: str, out_dir: Path, filename: str) -> None:
    report = _clean(report)
    jsonschema.validate(report, _schema(schema))
    text = dumps(report)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / filename).write_text(text)
    sys.stdout.write(text)


def initial_state(cfg: dict, model, seed: int | None = None) -> ClusterState:
    m = cfg["model"]["truncation"]
    init = cfg.get("initial", {"kind": "monodisperse", "rho0": 1.0})
    kind = init["kind"]
    if kind == "monodisperse":
        return ClusterState.monodisperse(float(init.get("rho0", 1.0)), m)
    if kind == "explicit":
        values = list(init["values"])
        if len(values) > m:
            raise ConfigError(f"explicit state has {len(values)} entries, truncation is {m}")
        return ClusterState(values + [0.0] * (m - len(values)))
    if kind == "equilibrium":
        if isinstance(model, ModifiedModel):
            return solve_equilibrium(model.ladder, float(init.get("rho_bar", 1.0))).state(m)
        return standard_equilibrium(model.params, float(init["mu"])).state(m)
    if kind == "random":
        rng = np.random.default_rng(seed if seed is not None else init.get("seed", 0))
        l = np.arange(1, m + 1)
        z = rng.random(m) * np.exp(-8.0 * (l - 1) / m)
        return ClusterState(z * float(init.get("rho0", 1.0)) / float(np.dot(l, z)))
    raise ConfigError(f"unknown initial kind {kind!r}")


def _model(cfg: dict):
    return model_from_config(cfg["model"])


def cmd_simulate(cfg: dict, name: str, out_dir: Path, seed: int | None) -> int:
    model = _model(cfg)
    z0 = initial_state(cfg, model, seed)
    icfg = IntegratorConfig.from_config(cfg.get("integrator"))
    analysis = cfg.get("analysis", {})
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        traj = simulate(z0, model, icfg, coordinates=analysis.get("coordinates", "z"))
    except NumericError as exc:
        partial = getattr(exc, "trajectory", None)
        if partial is not None:
            (out_dir / f"{name}.partial.csv").write_text(partial.to_csv())
        raise
    (out_dir / f"{name}.trajectory.csv").write_text(traj.to_csv())
    if cfg.get("output", {}).get("snapshots"):
        (out_dir / f"{name}.snapshots.jsonl").write_text(traj.snapshots_jsonl())
    inv = step_invariant_report(traj)
    report = {
        "command": "simulate",
        "scenario": name,
        "model": cfg["model"],
        "truncation": traj.truncation,
        "rho0": traj.rho0,
        "t_end": float(traj.times[-1]),
        "final": {
            "rho": traj.rho[-1], "N": traj.N[-1], "A": traj.A[-1], "A_tilde": traj.A_tilde[-1],
            "lambda": traj.lam[-1], "max_flux": traj.max_flux[-1],
            "z_boundary": traj.z_boundary[-1],
        },
        "invariants": inv.to_dict(),
        "steps": {"accepted": traj.accepted_steps, "rejected": traj.rejected_steps},
        "monitor_log": [e.to_dict() for e in traj.monitor_log],
        "certificate": None,
    }
    if "R_prime" in analysis and isinstance(model, ModifiedModel):
        window = analysis.get("certificate_window", [0.1 * icfg.t_end, icfg.t_end])
        report["certificate"] = mass_certificate(traj, model.ladder, tuple(window),
                                                 float(analysis["R_prime"])).to_dict()
    flagged = bool(traj.violations) or traj.truncation_affected
    report["status"] = "violations" if flagged else "ok"
    _emit(report, "simulate_report", out_dir, f"{name}.simulate.json")
    return EXIT_VIOLATION if flagged else EXIT_OK


def cmd_equilibrium(cfg: dict, name: str, out_dir: Path, seed: int | None) -> int:
    model = _model(cfg)
    analysis = cfg.get("analysis", {})
    report = {"command": "equilibrium", "scenario": name}
    if isinstance(model, StandardModel):
        mu = float(analysis.get("mu", model.params.z_s))
        eq = standard_equilibrium(model.params, mu)
        report.update({"verdict": "EQ", "model": "standard", "mu": eq.mu, "density": eq.density,
                       "density_error": eq.density_error, "certified": eq.certified})
        _emit(report, "equilibrium_report", out_dir, f"{name}.equilibrium.json")
        return EXIT_OK
    rho_bar = float(analysis.get("rho_bar", cfg.get("initial", {}).get("rho0", 1.0)))
    ladder = model.ladder
    cls = classify(ladder)
    report["classification"] = cls.to_dict()
    report["verdict"] = cls.verdict
    report["rho_bar"] = rho_bar
    if cls.verdict == "EQ":
        report.update(solve_equilibrium(ladder, rho_bar).to_dict())
        code = EXIT_OK
    elif cls.verdict == "NEQ":
        ms = analysis.get("minimizing_m", [5, 10, 20, 40, 80])
        report["infimum"] = 0.0
        report["minimizing_sequence"] = [minimizing_sequence(ladder, rho_bar, m).to_dict()
                                         for m in ms]
        code = EXIT_OK
    else:
        code = EXIT_INCONCLUSIVE
    _emit(report, "equilibrium_report", out_dir, f"{name}.equilibrium.json")
    return code


def cmd_classify(cfg: dict, name: str, out_dir: Path, seed: int | None) -> int:
    model = _model(cfg)
    if not isinstance(model, ModifiedModel):
        raise ConfigError("regime classification needs the modified model")
    analysis = cfg.get("analysis", {})
    icfg = cfg.get("integrator", {})
    budget_cfg = {"truncation": cfg["model"]["truncation"],
                  "t_end": icfg.get("t_end", 1000.0),
                  "record_every": icfg.get("record_every")}
    budget_cfg.update(analysis.get("regime_budget", {}))
    budget = RegimeBudget.from_config(budget_cfg)
    rho0 = float(cfg.get("initial", {}).get("rho0", 1.0))
    rep = regime_classify(model.ladder, model.kin, rho0, budget)
    report = {"command": "classify", "scenario": name, "rho0": rho0} | rep.to_dict()
    _emit(report, "regime_report", out_dir, f"{name}.classify.json")
    return EXIT_OK if rep.decided else EXIT_INCONCLUSIVE


def cmd_validate(cfg: dict, name: str, out_dir: Path, seed: int | None) -> int:
    model = _model(cfg)
    if not isinstance(model, ModifiedModel):
        raise ConfigError("assumption checks need the modified model")
    horizon = int(cfg.get("analysis", {}).get("horizon", 1000))
    rep = validate_assumptions(model.ladder, model.kin, horizon)
    report = {"command": "validate", "scenario": name} | rep.to_dict()
    _emit(report, "validate_report", out_dir, f"{name}.validate.json")
    return EXIT_OK if rep.passed else EXIT_VIOLATION


COMMANDS = {
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "classify": cmd_classify,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdkin", description=__doc__.splitlines()[0])
    parser.add_argument("--list", action="store_true", help="list built-in scenarios and exit")
    sub = parser.add_subparsers(dest="command")
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("scenario", nargs="?", help="scenario file or built-in name")
        p.add_argument("--config", help="scenario file or built-in name")
        p.add_argument("--out", help=f"output directory (default: output.dir or {DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="seed for random initial data")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list:
        print("\n".join(builtin_scenarios()))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    ref = args.config or args.scenario
    if ref is None:
        print("error: no scenario given (positional or --config)", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg, name = load_scenario(ref)
        out_dir = Path(args.out or cfg.get("output", {}).get("dir", DEFAULT_OUT))
        return COMMANDS[args.command](cfg, name, out_dir, args.seed)
    except (BDKinError, ValueError, OSError, KeyError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
