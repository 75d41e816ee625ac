"""Command-line entry point.

Usage::

    clusterdiff run CONFIG [--out DIR] [--seed N] [--threads N] [--no-theory]
    clusterdiff validate CONFIG
    clusterdiff theory CONFIG [--out DIR]
    clusterdiff oracle CONFIG [--out DIR]

Exit status: 0 success, 1 configuration error, 2 divergence while the config
sets ``require_stable``, 3 theory matrices above the size cap.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .adapt import AdaptConfig, ConvergenceError, centralized_descent
from .harness import (ALGORITHMS, STRATEGIES, ExperimentSpec, compare_strategies, run,
                      strategy_for, write_outputs)
from .synth import build_scenario
from .theory import (DEFAULT_SIZE_CAP, SizeCapExceeded, StabilityError, assemble, spectral_radius,
                     step_size_bound, steady_state_msd, transient_msd)
from .topology import ConstraintViolation, StructuralError, network_from_dict, validate

__all__ = ["main", "load_config", "ConfigError"]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_SIZE = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key


_DEFAULTS = {
    "environment": {},
    "algorithm": "atc",
    "n_trials": 100,
    "n_iters": 2000,
    "seed": 0,
    "theory": True,
    "require_stable": False,
    "size_cap": DEFAULT_SIZE_CAP,
    "output_dir": "out",
    "threads": 1,
}
_KEYS = set(_DEFAULTS) | {"scenario", "grid", "network", "strategies"}


def _int(cfg, key, lo):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(key, f"expected an integer >= {lo}, got {v!r}")


def _bool(cfg, key):
    if not isinstance(cfg[key], bool):
        raise ConfigError(key, f"expected true or false, got {cfg[key]!r}")


def load_config(doc: dict) -> dict:
    """Check a config document and fill in defaults.

    Raises
    ------
    ConfigError
        Naming the offending key.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in doc:
        if key not in _KEYS:
            raise ConfigError(key, "unknown key")
    for key in ("scenario", "grid"):
        if key not in doc:
            raise ConfigError(key, "missing required key")
    cfg = dict(_DEFAULTS)
    cfg.update(doc)
    if not isinstance(cfg["scenario"], str):
        raise ConfigError("scenario", "expected a string")
    if not isinstance(cfg["environment"], dict):
        raise ConfigError("environment", "expected an object")
    if cfg["algorithm"] not in ALGORITHMS:
        raise ConfigError("algorithm", f"expected one of {', '.join(ALGORITHMS)}")
    if "strategies" in cfg:
        s = cfg["strategies"]
        if not isinstance(s, list) or not s or any(x not in STRATEGIES for x in s):
            raise ConfigError("strategies", f"expected a non-empty list drawn from {', '.join(STRATEGIES)}")
    grid = cfg["grid"]
    if not isinstance(grid, list) or not grid:
        raise ConfigError("grid", "expected a non-empty list of [mu, eta] pairs")
    for i, pt in enumerate(grid):
        ok = isinstance(pt, list) and len(pt) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in pt)
        if not ok or not pt[0] > 0 or not pt[1] >= 0:
            raise ConfigError(f"grid[{i}]", f"expected [mu > 0, eta >= 0], got {pt!r}")
    _int(cfg, "n_trials", 1)
    _int(cfg, "n_iters", 1)
    _int(cfg, "seed", 0)
    _int(cfg, "size_cap", 1)
    _int(cfg, "threads", 1)
    _bool(cfg, "theory")
    _bool(cfg, "require_stable")
    if not isinstance(cfg["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    return cfg


def _scenario(cfg):
    env_params = dict(cfg["environment"])
    if cfg["scenario"] == "linear" and "network" in cfg and "network" not in env_params:
        env_params["network"] = cfg["network"]
    try:
        sc = build_scenario(cfg["scenario"], env_params)
    except KeyError as exc:
        key = exc.args[0] if exc.args else "environment"
        raise ConfigError(str(key), "unknown or missing") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("environment", str(exc)) from None
    if "network" in cfg and cfg["scenario"] != "linear":
        if sc.network is None:
            raise ConfigError("network", f"scenario '{cfg['scenario']}' has no adjustable network")
        try:
            net, comb = network_from_dict(cfg["network"])
        except StructuralError as exc:
            raise ConfigError("network", str(exc)) from None
        if net.n_nodes != sc.network.n_nodes:
            raise ConfigError("network.n_nodes", f"expected {sc.network.n_nodes}, got {net.n_nodes}")
        sc = replace(sc, network=net, combiners=comb)
    if sc.network is not None:
        try:
            validate(sc.network, sc.combiners)
        except (ConstraintViolation, StructuralError) as exc:
            raise ConfigError("network", str(exc)) from None
    return sc


def _canonical(cfg) -> bytes:
    # where results are written and how many threads compute them do not change them
    body = {k: v for k, v in cfg.items() if k not in ("output_dir", "threads")}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_manifest(out_dir, command, cfg, artifacts):
    doc = {
        "command": command,
        "version": __version__,
        "config_sha256": hashlib.sha256(_canonical(cfg)).hexdigest(),
        "seed": cfg["seed"],
        "artifacts": [{"path": p, "sha256": _sha256_file(os.path.join(out_dir, p))} for p in artifacts],
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _names(cfg):
    return tuple(cfg.get("strategies") or (cfg["algorithm"],))


def _db(x):
    return None if x is None or not x > 0 else 10.0 * math.log10(x)


def _cmd_run(cfg, sc, out_dir):
    spec = ExperimentSpec(sc, cfg["algorithm"], cfg["grid"], cfg["n_trials"], cfg["n_iters"], cfg["seed"],
                          theory=cfg["theory"], size_cap=cfg["size_cap"], threads=cfg["threads"])
    if "strategies" in cfg:
        result = compare_strategies(spec, tuple(cfg["strategies"])).result
    else:
        result = run(spec)
    artifacts = write_outputs(result, out_dir)
    _write_manifest(out_dir, "run", cfg, artifacts)
    for row in result.rows:
        print(f"{row.strategy} mu={row.mu:g} eta={row.eta:g}: {row.steady_state_msd_db:.2f} dB"
              + ("" if row.theory_msd_db is None else f" (theory {row.theory_msd_db:.2f} dB)"))
    diverged = [(r, t, n) for r in result.rows for t, n in r.diverged_trials]
    if diverged and cfg["require_stable"]:
        for r, t, n in diverged:
            print(f"diverged: {r.strategy} mu={r.mu:g} eta={r.eta:g} trial {t} at iteration {n}",
                  file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_theory(cfg, sc, out_dir):
    if not sc.has_moments or sc.network is None:
        raise ConfigError("scenario", f"'{cfg['scenario']}' provides no regressor moments for the theory model")
    w_star = np.asarray(sc.env.w_star, dtype=float)
    w0 = np.zeros_like(w_star) if sc.w0 is None else sc.w0
    rows, artifacts = [], []
    for mu, eta in cfg["grid"]:
        for name in _names(cfg):
            st = strategy_for(sc, name)
            e = st.effective_eta(eta)
            comb = st.combiners
            if st.algorithm == "single_task":
                comb = comb.replace(P=np.zeros_like(comb.P))
            model = assemble(sc.network, comb, sc.env, mu, e, size_cap=cfg["size_cap"])
            try:
                ss = steady_state_msd(model)
            except StabilityError:
                ss = None
            with warnings.catch_warnings(), np.errstate(all="ignore"):
                warnings.simplefilter("ignore", RuntimeWarning)
                curve = transient_msd(model, (w0 - w_star).reshape(-1), cfg["n_iters"])
            fname = f"theory_{name}_mu{mu:g}_eta{e:g}.csv"
            with open(os.path.join(out_dir, fname), "w", newline="") as fh:
                fh.write(curve.to_csv())
            artifacts.append(fname)
            rows.append({"strategy": name, "mu": float(mu), "eta": float(e),
                         "theory_msd_db": _db(ss), "theory_msd_linear": ss,
                         "spectral_radius_B": spectral_radius(model.B),
                         "step_size_bound": step_size_bound(model)})
    with open(os.path.join(out_dir, "theory_summary.json"), "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    artifacts.append("theory_summary.json")
    _write_manifest(out_dir, "theory", cfg, artifacts)
    for r in rows:
        shown = "unstable" if r["theory_msd_db"] is None else f"{r['theory_msd_db']:.2f} dB"
        print(f"{r['strategy']} mu={r['mu']:g} eta={r['eta']:g}: {shown}")
    return EXIT_OK


def _cmd_oracle(cfg, sc, out_dir):
    if not sc.has_moments or sc.network is None:
        raise ConfigError("scenario", f"'{cfg['scenario']}' provides no regressor moments for the oracle")
    env, net = sc.env, sc.network
    rows = []
    for mu, eta in cfg["grid"]:
        try:
            W = centralized_descent(env.R_x, env.p_xd, net, sc.combiners.P, AdaptConfig(mu, eta))
            rows.append({"mu": float(mu), "eta": float(eta), "converged": True,
                         "cluster_estimates": W.tolist(),
                         "node_offsets": (W[net.cluster_of] - env.w_star).tolist()})
        except ConvergenceError as exc:
            rows.append({"mu": float(mu), "eta": float(eta), "converged": False,
                         "gradient_norm": exc.grad_norm})
    with open(os.path.join(out_dir, "oracle.json"), "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "oracle", cfg, ["oracle.json"])
    for r in rows:
        print(f"mu={r['mu']:g} eta={r['eta']:g}: " + ("converged" if r["converged"] else
                                                      f"no convergence (|grad| = {r['gradient_norm']:.3e})"))
    return EXIT_OK


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment JSON document")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides seed)")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads for trials")
    common.add_argument("--no-theory", action="store_true", help="skip theory overlays")
    p = argparse.ArgumentParser(prog="clusterdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Monte Carlo experiment with theory overlays")
    sub.add_parser("validate", parents=[common], help="check the config and the combiners")
    sub.add_parser("theory", parents=[common], help="closed-form curves only, no simulation")
    sub.add_parser("oracle", parents=[common], help="centralized steepest-descent equilibrium")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: {args.config} is not valid JSON ({exc.msg}, line {exc.lineno})", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if isinstance(doc, dict):
            if args.seed is not None:
                doc["seed"] = args.seed
            if args.threads is not None:
                doc["threads"] = args.threads
            if args.no_theory:
                doc["theory"] = False
            if args.out is not None:
                doc["output_dir"] = args.out
        cfg = load_config(doc)
        sc = _scenario(cfg)
        if args.command == "validate":
            print("ok")
            return EXIT_OK
        out_dir = cfg["output_dir"]
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError("output_dir", f"cannot create {out_dir}: {exc.strerror}") from None
        if not os.access(out_dir, os.W_OK):
            raise ConfigError("output_dir", f"{out_dir} is not writable")
        handler = {"run": _cmd_run, "theory": _cmd_theory, "oracle": _cmd_oracle}[args.command]
        return handler(cfg, sc, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeCapExceeded as exc:
        print(f"size cap exceeded: {exc}", file=sys.stderr)
        return EXIT_SIZE


if __name__ == "__main__":
    sys.exit(main())
