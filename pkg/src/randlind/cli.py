"""Command-line front end.

Every command resolves its parameters in the order built-in defaults,
``--preset``, ``--config`` (JSON) and explicit flags, validates the result
before any computation, and writes a CSV whose ``#`` header records the
invocation, the resolved configuration, the seed and the package version.
Re-running the recorded invocation reproduces the file byte for byte.

Configuration schema (all keys optional; see ``DEFAULTS``)::

    {
      "kernel": {"type": "fractional", "gamma": 1.0, "beta_over_gamma": 0.5, "alpha": 0.5}
              | {"type": "fractional", "gamma": 1.0, "beta": 0.5, "alpha": 0.5}
              | {"type": "ensemble", "rates": [...], "weights": [...] or null}
              | {"type": "expo", "gamma0": 1.0, "a": 0.5, "b": 1.0, "r_max": 40}
              | {"type": "file", "path": "ensemble.json"},
      "sweep": {"beta_over_gamma" | "gamma" | "gamma_over_delta": [values]},
      "omega_a": 0.0, "delta": 1.0, "s0": [0, 0, 1],
      "grid": {"kind": "log" | "lin", "t_min": ..., "t_max": ..., "steps": ...},
      "method": ..., "tol": null, "seed": 0
    }

plus command-specific keys documented on each subcommand.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dynamics import (
    StepSizeError,
    ensemble_average_bloch,
    laplace_bloch,
    markovian_bloch_general,
    volterra_bloch,
    zeno_profile,
)
from .fits import fit_power_law, fit_stretched_exponential, shifted_observable
from .kernels import SystemParams, effective_kernel_set, exact_kernel_set, hopping_kernel_set
from .laplace import FractionalKernel, InversionError, invert_laplace, survival_laplace
from .mapping import (
    DecayTarget,
    QuadratureError,
    SpectralDensity,
    fit_rate_ensemble,
    qprime,
    read_two_columns,
)
from .rates import (
    ExpoFamilyParams,
    RateEnsemble,
    build_expo_ensemble,
    load_ensemble,
    moments,
    save_ensemble,
    survival_exact,
)
from .stochastic import (
    JUMP_MAPS,
    MixtureSampler,
    TrajectoryConfig,
    build_fractional_sampler,
    renewal_average,
    static_disorder_average,
)

__all__ = ["main", "RunConfig", "resolve_config", "DEFAULTS", "PRESETS", "ConfigError"]

COMMANDS = ("survival", "bloch", "trajectories", "finite-set", "map-spinboson")

FIG4_RATES = [0.59, 1.0, 1.09, 1.21, 4.0, 4.7, 4.88]

DEFAULTS = {
    "survival": {
        "kernel": {"type": "fractional", "gamma": 1.0, "beta_over_gamma": 0.5, "alpha": 0.5},
        "grid": {"kind": "log", "t_min": 1e-3, "t_max": 1e5, "steps": 400},
        "method": "talbot",
    },
    "bloch": {
        "kernel": {"type": "fractional", "gamma": 1.0, "beta_over_gamma": 0.5, "alpha": 0.5},
        "omega_a": 0.0,
        "delta": 1.0,
        "s0": [0.0, 0.0, 1.0],
        "grid": {"kind": "lin", "t_min": 0.0, "t_max": 20.0, "steps": 2000},
        "method": "laplace",
        "kernels": "auto",
        "compare": None,
        "zeno": False,
    },
    "trajectories": {
        "kernel": {"type": "ensemble", "rates": FIG4_RATES, "weights": None},
        "omega_a": 0.0,
        "delta": 1.0,
        "s0": [0.0, 0.0, 1.0],
        "grid": {"kind": "lin", "t_min": 0.0, "t_max": 10.0, "steps": 100},
        "mode": "renewal",
        "jump": "random_flip",
        "ordering": "reversed",
        "n_traj": 100000,
        "threads": None,
    },
    "finite-set": {
        "kernel": {"type": "ensemble", "rates": FIG4_RATES, "weights": None},
        "gamma_over_delta": 50.0,
        "omega_a": 0.0,
        "delta": 1.0,
        "s0": [0.0, 0.0, 1.0],
        "sigma": 0.01,
        "window": None,
        "grid": {"kind": "log", "t_min": 1e-2, "t_max": 1e5, "steps": 600},
        "method": "exact",
    },
    "map-spinboson": {
        "spectral": {"form": "ohmic", "eta": 1.0, "wc": 10.0},
        "d": 1.0,
        "kT": 100.0,
        "target": None,
        "n_rates": 20,
        "rate_bounds": [0.1, 1000.0],
        "grid": {"kind": "lin", "t_min": 0.0, "t_max": None, "steps": 100},
        "ensemble_out": None,
    },
}

for _cfg in DEFAULTS.values():
    _cfg.setdefault("sweep", None)
    _cfg.setdefault("tol", None)
    _cfg.setdefault("seed", 0)

PRESETS = {
    "fig1": ("survival", {
        "kernel": {"type": "fractional", "gamma": 1.0, "beta_over_gamma": 0.75, "alpha": 0.5},
        "sweep": {"beta_over_gamma": [0.75, 1e-1, 1e-2, 1e-3, 1e-4, 0.0]},
        "grid": {"kind": "log", "t_min": 1e-3, "t_max": 1e5, "steps": 400},
    }),
    "fig2": ("bloch", {
        "kernel": {"type": "fractional", "gamma": 0.05, "beta_over_gamma": 0.5, "alpha": 0.5},
        "sweep": {"gamma_over_delta": [0.05, 0.15, 1.0]},
        "omega_a": 0.0, "delta": 1.0, "s0": [0.0, 0.0, 1.0],
        "grid": {"kind": "lin", "t_min": 0.0, "t_max": 100.0, "steps": 2000},
        "method": "laplace",
    }),
    "fig3": ("bloch", {
        "kernel": {"type": "fractional", "gamma": 50.0, "beta_over_gamma": 0.5, "alpha": 0.5},
        "sweep": {"gamma_over_delta": [200.0, 100.0, 50.0, 25.0, 10.0, 2.5]},
        "omega_a": 0.0, "delta": 1.0, "s0": [0.0, 0.0, 1.0],
        "grid": {"kind": "log", "t_min": 1e-3, "t_max": 1e4, "steps": 500},
        "method": "laplace",
        "zeno": True,
    }),
    "fig4": ("finite-set", {
        "kernel": {"type": "ensemble", "rates": FIG4_RATES, "weights": None},
        "sweep": {"gamma_over_delta": [50.0, 25.0, 10.0, 5.0, 3.5, 2.5]},
        "sigma": 0.01,
        "grid": {"kind": "log", "t_min": 1e-2, "t_max": 1e5, "steps": 600},
    }),
}

BLOCH_METHODS = ("exact", "volterra", "laplace", "markov")
KERNEL_ROUTES = ("auto", "exact", "hopping", "effective")
SWEEP_KEYS = ("beta_over_gamma", "gamma", "gamma_over_delta")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters of one command."""

    command: str
    params: dict

    def to_json(self) -> str:
        return json.dumps(self.params, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- config


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "kernel":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _floats(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _flag_overrides(command: str, args) -> dict:
    o: dict = {}
    grid = {k: v for k, v in (("kind", args.grid), ("t_min", args.t_min), ("t_max", args.t_max),
                              ("steps", args.steps)) if v is not None}
    if grid:
        o["grid"] = grid
    for key in ("method", "tol", "seed"):
        v = getattr(args, key)
        if v is not None:
            o[key] = v
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("rates_file") is not None:
        o["kernel"] = {"type": "file", "path": args.rates_file}
    elif get("rates") is not None:
        o["kernel"] = {"type": "ensemble", "rates": args.rates, "weights": get("weights")}
    elif any(get(n) is not None for n in ("gamma", "beta", "beta_over_gamma", "alpha")):
        o["kernel_fractional"] = {n: get(n) for n in ("gamma", "beta", "beta_over_gamma", "alpha")
                                  if get(n) is not None}
    elif get("weights") is not None:
        o["kernel_weights"] = args.weights
    if get("no_sweep"):
        o["sweep"] = None
    simple = ("omega_a", "delta", "compare", "kernels", "mode", "jump", "ordering", "n_traj",
              "threads", "sigma", "gamma_over_delta", "d", "kT", "n_rates", "ensemble_out", "target")
    for n in simple:
        if get(n) is not None:
            o[n] = get(n)
    if get("zeno"):
        o["zeno"] = True
    if get("s0") is not None:
        o["s0"] = args.s0
    if get("window") is not None:
        o["window"] = args.window
    if get("rate_bounds") is not None:
        o["rate_bounds"] = args.rate_bounds
    if command == "map-spinboson":
        sp = {k: get(k) for k in ("eta", "wc") if get(k) is not None}
        if get("spectral_file") is not None:
            sp = {"form": "tabulated", "path": args.spectral_file}
        if sp:
            o["spectral"] = sp
    return o


def resolve_config(command: str, args) -> RunConfig:
    """Merge defaults, preset, config file and flags; validate the result."""
    params = copy.deepcopy(DEFAULTS[command])
    if args.preset is not None:
        target, preset = PRESETS[args.preset]
        if target != command:
            raise ConfigError(f"preset {args.preset} belongs to the '{target}' command, not '{command}'")
        params = _merge(params, preset)
    if args.config is not None:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(params)
        if unknown:
            raise ConfigError(f"unknown config keys for '{command}': {sorted(unknown)}")
        params = _merge(params, data)
    over = _flag_overrides(command, args)
    weights = over.pop("kernel_weights", None)
    fractional = over.pop("kernel_fractional", None)
    params = _merge(params, over)
    if fractional is not None:
        # partial fractional flags refine a fractional kernel, otherwise start afresh
        base = dict(params["kernel"]) if params["kernel"].get("type") == "fractional" else {"type": "fractional"}
        if "beta" in fractional or "beta_over_gamma" in fractional:
            base.pop("beta", None)
            base.pop("beta_over_gamma", None)
        base.update(fractional)
        params["kernel"] = base
    if weights is not None:
        if params["kernel"].get("type") != "ensemble":
            raise ConfigError("--weights needs an ensemble kernel (--rates)")
        params["kernel"] = dict(params["kernel"], weights=weights)
    cfg = RunConfig(command, params)
    _validate(cfg)
    return cfg


def _grid_times(g: dict) -> np.ndarray:
    kind, t_min, t_max, steps = g["kind"], g["t_min"], g["t_max"], g["steps"]
    if kind == "log":
        return np.geomspace(t_min, t_max, steps + 1)
    return np.linspace(t_min, t_max, steps + 1)


def _check_grid(g: dict) -> None:
    if g.get("kind") not in ("lin", "log"):
        raise ConfigError("grid kind must be 'lin' or 'log'")
    t_min, t_max, steps = g.get("t_min"), g.get("t_max"), g.get("steps")
    if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
        raise ConfigError("--steps must be a positive integer")
    if t_max is None or not (math.isfinite(t_max) and t_max > 0):
        raise ConfigError("--t-max must be positive and finite")
    if t_min is None or not (math.isfinite(t_min) and 0 <= t_min < t_max):
        raise ConfigError("--t-min must satisfy 0 <= t_min < t_max")
    if g["kind"] == "log" and t_min <= 0:
        raise ConfigError("a log grid needs --t-min > 0")


def _kernel_object(spec: dict, delta: float = 1.0):
    """``RateEnsemble`` or ``FractionalKernel`` from a kernel record."""
    kind = spec.get("type")
    try:
        if kind == "ensemble":
            return RateEnsemble(spec["rates"], spec.get("weights"))
        if kind == "file":
            return load_ensemble(spec["path"])
        if kind == "expo":
            return build_expo_ensemble(ExpoFamilyParams(spec["gamma0"], spec["a"], spec["b"], int(spec["r_max"])))
        if kind == "fractional":
            g = spec["gamma"]
            if "beta" in spec and "beta_over_gamma" in spec:
                raise ConfigError("give either beta or beta_over_gamma, not both")
            beta = spec["beta"] if "beta" in spec else spec["beta_over_gamma"] * g
            return FractionalKernel(g, beta, spec["alpha"])
    except KeyError as exc:
        raise ConfigError(f"kernel of type {kind!r} is missing {exc}") from None
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid kernel: {exc}") from None
    raise ConfigError(f"unknown kernel type {kind!r}")


def _sweep_cases(p: dict):
    """``(label, kernel record)`` for each sweep value, or one unlabeled case."""
    base = p["kernel"]
    sweep = p.get("sweep")
    if not sweep:
        return [("", base)]
    if not isinstance(sweep, dict) or len(sweep) != 1:
        raise ConfigError("sweep must map exactly one parameter to a list of values")
    (key, values), = sweep.items()
    if key not in SWEEP_KEYS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_KEYS}")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep values must be a nonempty list")
    cases = []
    for v in values:
        spec = dict(base)
        if key == "gamma_over_delta":
            if spec["type"] == "fractional":
                spec["gamma"] = v * p.get("delta", 1.0)
            else:
                spec = _scaled_ensemble_spec(spec, v * p.get("delta", 1.0))
        elif spec["type"] != "fractional":
            raise ConfigError(f"sweeping {key} needs a fractional kernel")
        else:
            spec[key] = v
            if key == "beta_over_gamma":
                spec.pop("beta", None)
        cases.append((f"[{key}={v:g}]", spec))
    return cases


def _scaled_ensemble_spec(spec: dict, mean_rate: float) -> dict:
    """Rescale an ensemble record so its mean rate equals ``mean_rate``."""
    ens = _kernel_object(spec)
    scaled = ens.scaled(mean_rate / moments(ens).gamma_mean)
    return {"type": "ensemble", "rates": scaled.rates.tolist(), "weights": scaled.weights.tolist()}


def _validate(cfg: RunConfig) -> None:
    p = cfg.params
    if cfg.command == "map-spinboson" and p["grid"]["t_max"] is None and p["target"] is None:
        sd = _spectral_density(p)
        if sd.form != "ohmic":
            raise ConfigError("a tabulated spectral density needs an explicit --t-max")
        p["grid"]["t_max"] = 5.0 / sd.wc
    if not (cfg.command == "map-spinboson" and p["target"] is not None):
        _check_grid(p["grid"])
    if not (isinstance(p["seed"], int) and 0 <= p["seed"] < 2**64):
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    if p["tol"] is not None and not p["tol"] > 0:
        raise ConfigError("--tol must be positive")
    if "s0" in p:
        s0 = np.asarray(p["s0"], dtype=float)
        if s0.shape != (3,) or np.linalg.norm(s0) > 1 + 1e-12:
            raise ConfigError("s0 must be a Bloch vector of length <= 1")
    cmd = cfg.command
    if cmd == "map-spinboson":
        _validate_map(p)
        return
    if cmd == "finite-set" and p.get("sweep") is None and p["gamma_over_delta"] is not None:
        p["kernel"] = _scaled_ensemble_spec(p["kernel"], p["gamma_over_delta"] * p["delta"])
    cases = _sweep_cases(p)
    objs = [_kernel_object(spec) for _, spec in cases]
    if cmd == "survival":
        if p["method"] not in ("talbot", "gaver_stehfest"):
            raise ConfigError("survival --method must be talbot or gaver_stehfest")
        return
    sysp = SystemParams(p["omega_a"], p["delta"])
    if cmd == "bloch":
        _validate_bloch(p, objs, sysp)
    elif cmd == "trajectories":
        if p.get("method") is not None:
            raise ConfigError("trajectories selects its estimator with --mode, not --method")
        if p["mode"] not in ("renewal", "static"):
            raise ConfigError("--mode must be renewal or static")
        if p["jump"] not in JUMP_MAPS or p["ordering"] not in ("reversed", "forward"):
            raise ConfigError(f"--jump must be one of {JUMP_MAPS}; --ordering reversed or forward")
        if not (isinstance(p["n_traj"], int) and p["n_traj"] >= 1):
            raise ConfigError("--n-traj must be a positive integer")
        for o in objs:
            if p["mode"] == "static" and not isinstance(o, RateEnsemble):
                raise ConfigError("static disorder needs a finite rate ensemble")
            if isinstance(o, RateEnsemble) and o.has_zero_rate:
                raise ConfigError("renewal sampling needs strictly positive rates")
    elif cmd == "finite-set":
        if p["method"] != "exact":
            raise ConfigError("finite-set uses the exact ensemble average only (--method exact)")
        if not 0 <= p["sigma"] < 1:
            raise ConfigError("sigma must lie in [0, 1)")
        if any(not isinstance(o, RateEnsemble) for o in objs):
            raise ConfigError("finite-set needs a finite rate ensemble")
        w = p["window"]
        if w is not None and not (len(w) == 2 and 0 < w[0] < w[1]):
            raise ConfigError("--window must be two increasing positive times")


def _validate_bloch(p, objs, sysp):
    m = p["method"]
    if m not in BLOCH_METHODS:
        raise ConfigError(f"bloch --method must be one of {BLOCH_METHODS}")
    if p["kernels"] not in KERNEL_ROUTES:
        raise ConfigError(f"--kernels must be one of {KERNEL_ROUTES}")
    if p["compare"] is not None and p["compare"] not in BLOCH_METHODS:
        raise ConfigError(f"--compare must be one of {BLOCH_METHODS}")
    if p["zeno"] and any(not isinstance(o, FractionalKernel) for o in objs):
        raise ConfigError("the Zeno profile is defined for the fractional kernel only")
    for meth in filter(None, (m, p["compare"])):
        for o in objs:
            _check_bloch_route(meth, p, o, sysp)


def _check_bloch_route(meth, p, obj, sysp):
    ens = isinstance(obj, RateEnsemble)
    if meth == "exact" and not ens:
        raise ConfigError("method exact needs a finite rate ensemble")
    if meth == "markov" and not ((ens and obj.distinct()[0].size == 1) or (not ens and obj.beta == 0)):
        raise ConfigError("method markov needs a single rate (or beta = 0)")
    if meth == "laplace" and sysp.omega_a != 0:
        raise ConfigError("method laplace needs omega_a = 0")
    if meth == "volterra":
        g = p["grid"]
        if g["kind"] != "lin" or g["t_min"] != 0:
            raise ConfigError("method volterra needs a linear grid starting at t = 0")
        route = _kernel_route(p["kernels"], obj, sysp)
        if route == "exact" and not ens:
            raise ConfigError("exact kernels need a finite rate ensemble")
        if route == "hopping" and sysp.omega_a != 0:
            raise ConfigError("hopping kernels need omega_a = 0")
        scale = max(obj.rates.max() if ens else obj.gamma, abs(sysp.delta), abs(sysp.omega_a), sysp.phi)
        h = g["t_max"] / g["steps"]
        if h * scale > 0.05:
            need = int(math.ceil(g["t_max"] * scale / 0.05))
            raise ConfigError(f"step too large for the Volterra solver (h * rate = {h * scale:.3g} > 0.05); "
                              f"use --steps >= {need}")


def _kernel_route(choice, obj, sysp):
    if choice != "auto":
        return choice
    if isinstance(obj, RateEnsemble):
        return "exact"
    return "hopping" if sysp.omega_a == 0 else "effective"


def _validate_map(p):
    n = p["n_rates"]
    if not (isinstance(n, int) and n >= 1):
        raise ConfigError("--n-rates must be a positive integer")
    lo, hi = p["rate_bounds"]
    if not 0 < lo < hi:
        raise ConfigError("--rate-bounds must satisfy 0 < low < high")
    if p["target"] is None:
        sd = _spectral_density(p)
        if sd.is_zero:
            raise ConfigError("the spectral density vanishes identically, so the decay target is "
                              "constant (exp(-Q') = 1) and there is no decay to fit")
        g = p["grid"]
        if g["steps"] + 1 < 2 * n:
            raise ConfigError(f"the fit needs at least {2 * n} samples; use --steps >= {2 * n - 1}")


def _spectral_density(p) -> SpectralDensity:
    sp = p["spectral"]
    try:
        if sp.get("form") == "tabulated":
            w, J = read_two_columns(sp["path"])
            return SpectralDensity("tabulated", w=w, J=J, d=p["d"], kT=p["kT"])
        return SpectralDensity("ohmic", eta=sp["eta"], wc=sp["wc"], d=p["d"], kT=p["kT"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid spectral density: {exc}") from None


# ---------------------------------------------------------------- commands


def _survival_columns(obj, t, method, tol):
    cols = {}
    if isinstance(obj, RateEnsemble):
        cols["P0_exact"] = survival_exact(obj, t)
        m = moments(obj)
        cols["short_asymptote"] = np.exp(-m.gamma_mean * t)
        slow = obj.rates.argmin()
        cols["long_asymptote"] = obj.weights[slow] * np.exp(-obj.rates[slow] * t)
        return cols
    p0 = np.ones(t.shape)
    pos = t > 0
    if obj.beta == 0:
        p0 = np.exp(-obj.gamma * t)
    elif np.any(pos):
        p0[pos] = invert_laplace(survival_laplace(obj), t[pos], method=method, tol=tol)
    cols["P0_inverted"] = p0
    cols["short_asymptote"] = np.exp(-obj.gamma * t)
    with np.errstate(divide="ignore"):
        cols["long_asymptote"] = obj.long_time_prefactor() * t ** (-obj.alpha)
    return cols


def cmd_survival(cfg: RunConfig):
    p = cfg.params
    t = _grid_times(p["grid"])
    cols, notes = {"t": t}, []
    for label, spec in _sweep_cases(p):
        for name, col in _survival_columns(_kernel_object(spec), t, p["method"], p["tol"]).items():
            cols[name + label] = col
    return cols, notes


def _bloch_route(meth, obj, p, sysp, t):
    s0 = np.asarray(p["s0"], dtype=float)
    if meth == "exact":
        return ensemble_average_bloch(obj, sysp, s0, t)
    if meth == "markov":
        g = float(obj.rates[0]) if isinstance(obj, RateEnsemble) else obj.gamma
        return markovian_bloch_general(g, sysp, s0, t)
    if meth == "laplace":
        return laplace_bloch(obj, sysp.delta, s0, t)
    route = _kernel_route(p["kernels"], obj, sysp)
    if route == "exact":
        kset = exact_kernel_set(obj, sysp)
    elif route == "hopping":
        kset = hopping_kernel_set(obj, sysp.delta)
    else:
        kset = effective_kernel_set(obj, sysp)
    return volterra_bloch(kset, sysp, s0, t)


def _p0(obj, t):
    if isinstance(obj, RateEnsemble):
        return survival_exact(obj, t)
    out = np.ones(t.shape)
    pos = t > 0
    if obj.beta == 0:
        return np.exp(-obj.gamma * t)
    if np.any(pos):
        out[pos] = invert_laplace(survival_laplace(obj), t[pos])
    return out


def cmd_bloch(cfg: RunConfig):
    p = cfg.params
    t = _grid_times(p["grid"])
    sysp = SystemParams(p["omega_a"], p["delta"])
    cols, notes = {"t": t}, []
    for label, spec in _sweep_cases(p):
        obj = _kernel_object(spec)
        s = _bloch_route(p["method"], obj, p, sysp, t)
        for i, name in enumerate(("sx", "sy", "sz")):
            cols[name + label] = s[:, i]
        if sysp.omega_a == 0:
            env = _p0(obj, t / 2)
            cols["env_plus" + label] = env
            cols["env_minus" + label] = -env
        if p["zeno"]:
            cols["zeno" + label] = zeno_profile(obj, sysp.delta, t).z
        if p["compare"] is not None:
            other = _bloch_route(p["compare"], obj, p, sysp, t)
            diff = np.max(np.abs(s - other), axis=1)
            cols["diff" + label] = diff
            worst = float(diff.max())
            notes.append(f"max |{p['method']} - {p['compare']}|{label} = {worst:.3e}")
            if p["tol"] is not None and worst > p["tol"]:
                notes.append(f"TOLERANCE EXCEEDED: {worst:.3e} > {p['tol']:g}")
    return cols, notes


def cmd_trajectories(cfg: RunConfig):
    p = cfg.params
    t = _grid_times(p["grid"])
    sysp = SystemParams(p["omega_a"], p["delta"])
    tc = TrajectoryConfig(p["n_traj"], p["seed"], t, p["threads"])
    cols, notes = {"t": t}, [f"n_traj={p['n_traj']} seed={p['seed']}"]
    for label, spec in _sweep_cases(p):
        obj = _kernel_object(spec)
        if p["mode"] == "static":
            res = static_disorder_average(obj, sysp, p["s0"], tc)
        else:
            sampler = MixtureSampler(obj) if isinstance(obj, RateEnsemble) else build_fractional_sampler(obj)
            res = renewal_average(sysp, sampler, p["s0"], tc, jump=p["jump"], ordering=p["ordering"])
        for i, name in enumerate(("sx", "sy", "sz")):
            cols[name + label] = res.mean[:, i]
        for i, name in enumerate(("se_sx", "se_sy", "se_sz")):
            cols[name + label] = res.se[:, i]
        worst = float(res.se.max())
        if p["tol"] is not None and worst > p["tol"]:
            notes.append(f"TOLERANCE EXCEEDED: max standard error{label} {worst:.3e} > {p['tol']:g}")
    return cols, notes


def cmd_finite_set(cfg: RunConfig):
    p = cfg.params
    t = _grid_times(p["grid"])
    sysp = SystemParams(p["omega_a"], p["delta"])
    sigma = p["sigma"]
    cols, notes = {"t": t}, []
    for label, spec in _sweep_cases(p):
        ens = _kernel_object(spec)
        m = moments(ens)
        s = ensemble_average_bloch(ens, sysp, p["s0"], t)
        shifted = shifted_observable(s[:, 2], sigma)
        cols["sz" + label] = s[:, 2]
        cols["sz_sigma" + label] = shifted
        notes.append(f"moments{label}: gamma/delta={m.gamma_mean / sysp.delta:.6g} "
                     f"beta/gamma={m.beta / m.gamma_mean:.6g}")
        try:
            se = fit_stretched_exponential(t, shifted, sigma, p["window"])
            pl = fit_power_law(t, shifted, sigma, p["window"])
        except (ValueError, RuntimeError) as exc:
            notes.append(f"fit failed{label}: {exc}")
            continue
        cols["stretched_fit" + label] = se(t)
        cols["power_fit" + label] = pl(t)
        notes.append(f"stretched{label}: zeta={se.zeta:.6g} delta={se.delta:.6g} rms_log={se.rms_log_residual:.3g}")
        notes.append(f"power_law{label}: zeta={pl.zeta:.6g} delta={pl.delta:.6g} rms_log={pl.rms_log_residual:.3g}")
        if p["tol"] is not None and min(se.rms_log_residual, pl.rms_log_residual) > p["tol"]:
            notes.append(f"TOLERANCE EXCEEDED: no fit{label} reaches rms log residual {p['tol']:g}")
    return cols, notes


def cmd_map_spinboson(cfg: RunConfig, out: Optional[Path]):
    p = cfg.params
    notes = []
    if p["target"] is not None:
        tt, ff = read_two_columns(p["target"])
        target = DecayTarget(tt, ff)
        notes.append(f"target file: {p['target']}")
    else:
        sd = _spectral_density(p)
        t = _grid_times(p["grid"])
        target = DecayTarget(t, np.exp(-qprime(sd, t)))
    fit = fit_rate_ensemble(target, p["n_rates"], p["rate_bounds"], tol=p["tol"] if p["tol"] is not None else 1e-2)
    cols = {"t": target.t, "target": target.f, "fit": survival_exact(fit.ensemble, target.t)}
    notes.append(f"fit residual (sup norm) = {fit.residual:.6e} feasible={fit.feasible}")
    ens_path = p["ensemble_out"]
    if ens_path is None and out is not None:
        ens_path = str(out.with_suffix(".ensemble.json"))
    if ens_path is not None:
        save_ensemble(fit.ensemble, ens_path)
        notes.append(f"fitted ensemble: {ens_path}")
    if not fit.feasible:
        notes.append(f"TOLERANCE EXCEEDED: residual {fit.residual:.3e} above tolerance")
    return cols, notes


# ---------------------------------------------------------------- output


def write_csv(fh, cols: dict, header_lines) -> None:
    for line in header_lines:
        fh.write(f"# {line}\n")
    names = list(cols)
    fh.write(",".join(names) + "\n")
    data = np.column_stack([np.asarray(cols[n], dtype=float) for n in names])
    for row in data:
        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _strip_out(argv):
    """Drop ``--out`` from the recorded invocation; the path does not affect the data."""
    kept, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            kept.append(a)
    return kept


def _header(cfg: RunConfig, argv, notes):
    lines = [
        f"randlind {__version__}",
        "invocation: randlind " + shlex.join(_strip_out(argv)),
        f"command: {cfg.command}",
        f"config: {cfg.to_json()}",
        f"seed: {cfg.params['seed']}",
    ]
    return lines + list(notes)


# ---------------------------------------------------------------- parser


def _global_parent() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    a = g.add_argument_group("global options")
    a.add_argument("--config", help="JSON file with command parameters")
    a.add_argument("--out", help="output CSV path (default: standard output)")
    a.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    a.add_argument("--method", help="solver route; meaning depends on the command")
    a.add_argument("--tol", type=float, help="tolerance for the command's self-check")
    a.add_argument("--t-max", type=float, dest="t_max")
    a.add_argument("--t-min", type=float, dest="t_min")
    a.add_argument("--steps", type=int, help="number of grid intervals")
    a.add_argument("--grid", choices=("lin", "log"), help="grid spacing")
    a.add_argument("--preset", choices=sorted(PRESETS), help="figure parameter preset")
    a.add_argument("--no-sweep", action="store_true", help="drop any preset sweep")
    return g


def _kernel_flags(p: argparse.ArgumentParser) -> None:
    k = p.add_argument_group("kernel")
    k.add_argument("--rates", type=_floats, help="comma-separated rates of a finite ensemble")
    k.add_argument("--weights", type=_floats, help="comma-separated weights (default: equal)")
    k.add_argument("--rates-file", help="ensemble JSON file")
    k.add_argument("--gamma", type=float, help="fractional kernel mean rate")
    k.add_argument("--beta", type=float, help="fractional kernel fluctuation rate")
    k.add_argument("--beta-over-gamma", type=float, dest="beta_over_gamma")
    k.add_argument("--alpha", type=float, help="fractional kernel exponent in (0, 1)")


def _system_flags(p: argparse.ArgumentParser) -> None:
    s = p.add_argument_group("system")
    s.add_argument("--omega-a", type=float, dest="omega_a")
    s.add_argument("--delta", type=float)
    s.add_argument("--s0", type=_floats, help="initial Bloch vector sx,sy,sz")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randlind", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"randlind {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _global_parent()

    p = sub.add_parser("survival", parents=[parent], help="survival probability P0(t)")
    _kernel_flags(p)

    p = sub.add_parser("bloch", parents=[parent], help="averaged Bloch dynamics")
    _kernel_flags(p)
    _system_flags(p)
    p.add_argument("--kernels", choices=KERNEL_ROUTES, help="kernel set for --method volterra")
    p.add_argument("--compare", choices=BLOCH_METHODS, help="second route for a difference column")
    p.add_argument("--zeno", action="store_true", default=None, help="add the Zeno profile column")

    p = sub.add_parser("trajectories", parents=[parent], help="Monte Carlo trajectory averages")
    _kernel_flags(p)
    _system_flags(p)
    p.add_argument("--mode", choices=("renewal", "static"))
    p.add_argument("--jump", choices=JUMP_MAPS)
    p.add_argument("--ordering", choices=("reversed", "forward"))
    p.add_argument("--n-traj", type=int, dest="n_traj")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("finite-set", parents=[parent], help="finite rate set with decay fits")
    _kernel_flags(p)
    _system_flags(p)
    p.add_argument("--gamma-over-delta", type=float, dest="gamma_over_delta")
    p.add_argument("--sigma", type=float)
    p.add_argument("--window", type=_floats, help="fit window t_lo,t_hi")

    p = sub.add_parser("map-spinboson", parents=[parent], help="fit a rate ensemble to exp(-Q')")
    p.add_argument("--eta", type=float)
    p.add_argument("--wc", type=float)
    p.add_argument("--spectral-file", dest="spectral_file", help="two-column table w, J(w)")
    p.add_argument("--d", type=float, help="coupling constant")
    p.add_argument("--kT", type=float, dest="kT")
    p.add_argument("--target", help="two-column decay table t, f(t) instead of exp(-Q')")
    p.add_argument("--n-rates", type=int, dest="n_rates")
    p.add_argument("--rate-bounds", type=_floats, dest="rate_bounds")
    p.add_argument("--ensemble-out", dest="ensemble_out")
    return parser


RUNNERS = {
    "survival": cmd_survival,
    "bloch": cmd_bloch,
    "trajectories": cmd_trajectories,
    "finite-set": cmd_finite_set,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as exc:
        print(f"randlind {args.command}: error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    try:
        if cfg.command == "map-spinboson":
            cols, notes = cmd_map_spinboson(cfg, out)
        else:
            cols, notes = RUNNERS[cfg.command](cfg)
    except (StepSizeError, InversionError, QuadratureError, ValueError) as exc:
        print(f"randlind {args.command}: error: {exc}", file=sys.stderr)
        return 1
    header = _header(cfg, argv, notes)
    if out is None:
        write_csv(sys.stdout, cols, header)
    else:
        with open(out, "w", newline="") as fh:
            write_csv(fh, cols, header)
    failed = [n for n in notes if n.startswith("TOLERANCE EXCEEDED")]
    for n in failed:
        print(f"randlind {args.command}: {n}", file=sys.stderr)
    return 3 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
