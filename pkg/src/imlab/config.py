"""Typed INI run configuration with strict validation and lossless round trip."""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass
from typing import Any, Callable

from . import dissipation as dis
from . import dynamics as dyn
from . import measure as ms
from . import models as mdl


class ConfigError(ValueError):
    """Collected validation problems, each ``(path, expected, got)``."""

    def __init__(self, errors: list[tuple[str, str, str]]):
        self.errors = errors
        lines = [f"{p}: expected {e}, got {g}" for p, e, g in errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


# ---------------------------------------------------------------------------
# value types


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    dump: Callable[[Any], str]
    default: Any
    expected: str


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError
    return v


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError


def f_float(default, expected="a real number"):
    return Field(_float, repr, default, expected)


def f_int(default, expected="an integer"):
    return Field(lambda s: int(s.strip()), str, default, expected)


def f_bool(default):
    return Field(_bool, lambda v: "true" if v else "false", default, "true or false")


def f_str(default, choices=None):
    def parse(s):
        s = s.strip()
        if choices and s not in choices:
            raise ValueError
        return s
    exp = "one of " + "|".join(choices) if choices else "a string"
    return Field(parse, str, default, exp)


def f_floats(default, expected="comma-separated reals"):
    return Field(lambda s: tuple(_float(t) for t in _split(s)),
                 lambda v: ", ".join(repr(float(x)) for x in v), default, expected)


def f_ints(default, expected="comma-separated integers"):
    return Field(lambda s: tuple(int(t) for t in _split(s)),
                 lambda v: ", ".join(str(int(x)) for x in v), default, expected)


def f_names(default, expected="comma-separated names"):
    return Field(lambda s: tuple(_split(s)), lambda v: ", ".join(v), default, expected)


def f_opt_float(default=None, expected="a real number or 'auto'"):
    def parse(s):
        s = s.strip()
        return None if s in ("", "auto") else _float(s)
    return Field(parse, lambda v: "auto" if v is None else repr(float(v)), default, expected)


REQUIRED = object()

SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "kind": f_str("simulate", ("simulate", "sweep", "ensemble", "verify")),
        "seed": f_int(0, "a nonnegative integer"),
        "paths": f_int(16, "a positive integer"),
    },
    "model": {
        "variant": f_str(REQUIRED, tuple(mdl.MODEL_NAMES)),
        "N": f_int(8, "a positive integer"),
        "mode_radius": f_int(0, "a nonnegative integer (0 = use N)"),
        "a": f_float(1.0), "b": f_float(-3.0), "lam": f_float(2.0), "k0": f_float(0.5),
        "alpha_sqg": f_float(0.5),
        "coriolis": f_floats((0.0, 0.0, 0.0), "three comma-separated reals"),
        "allow_singular": f_bool(False),
    },
    "dissipation": {
        "s_star": f_float(4.0), "s1_star": f_float(5.0),
        "q": f_int(6, "an even integer >= 2"),
        "flags": f_ints((1, 0, 0), "three 0/1 flags, not all zero"),
        "rho": f_str("linear", ("linear", "affine-exp")),
        "rho_delta": f_float(1.0), "rho_c": f_float(0.0), "rho_beta": f_float(0.0),
    },
    "noise": {
        "family": f_str("exponential", ("exponential", "algebraic", "table")),
        "amplitude": f_float(1.0), "gamma": f_float(0.7), "r": f_float(2.0),
        "table": f_floats((), "comma-separated amplitudes"),
        "scale": f_float(1.0, "a nonnegative real"),
    },
    "integrator": {
        "dt": f_float(0.01, "a positive real"), "c_step": f_float(1.0, "a real in (0, 1]"),
        "rtol": f_float(1e-10), "atol": f_float(1e-13),
        "norm_order": f_opt_float(None),
    },
    "experiment": {
        "alpha": f_float(0.5, "a positive real"),
        "alphas": f_floats((0.5,), "a decreasing list of positive reals"),
        "Ns": f_ints((), "an increasing list of truncations (empty = model.N)"),
        "horizon": f_float(200.0, "a positive real"),
        "burn_in": f_float(0.2, "a fraction in [0, 1)"),
        "batches": f_int(30, "an integer >= 2"),
        "sample_every": f_int(1, "a positive integer"),
        "reservoir": f_int(1000, "a nonnegative integer"),
        "reservoir_every": f_int(10, "a positive integer"),
        "checks": f_names(("identity", "tail", "balance")),
        "balance_horizon": f_float(2.0, "a positive real"),
        "balance_dt": f_float(0.002, "a positive real"),
        "invariance_t": f_float(1.0, "a nonnegative real"),
    },
    "ensemble": {
        "i_list": f_ints((2, 3, 4), "positive integers"),
        "j_max": f_int(2, "a positive integer"),
        "r": f_float(4.0, "a real <= s_star"),
        "c_T": f_opt_float(None),
        "both_directions": f_bool(True),
    },
    "verify": {
        "trials": f_int(100, "a positive integer"),
        "models": f_names(tuple(mdl.MODEL_NAMES), "model variant names"),
    },
}

CHECKS = ("identity", "tail", "no_atom", "second_balance", "balance", "invariance", "moments")


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> typed value

    def __getitem__(self, path: str):
        sec, key = path.split(".")
        return self.values[sec][key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    @property
    def kind(self) -> str:
        return self["run.kind"]

    @property
    def N(self) -> int:
        K = self["model.mode_radius"]
        return K * K if K else self["model.N"]

    def with_overrides(self, **kw) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        for path, v in kw.items():
            sec, key = path.split("__") if "__" in path else path.split(".")
            vals[sec][key] = v
        return validate(vals)

    # builders
    def model(self):
        v = self.values["model"]
        name = v["variant"]
        if name == "GSQG":
            return mdl.GSQG(v["alpha_sqg"], allow_singular=v["allow_singular"])
        if name == "Euler3DVelocity":
            return mdl.Euler3DVelocity(v["coriolis"])
        if name in ("Sabra", "GOY"):
            return mdl.MODEL_NAMES[name](v["a"], v["b"], v["lam"], v["k0"])
        return mdl.MODEL_NAMES[name]()

    def diss(self) -> dis.DissipationSpec:
        v = self.values["dissipation"]
        rho = dis.Rho(v["rho"], v["rho_delta"], v["rho_c"], v["rho_beta"])
        return dis.DissipationSpec(v["s_star"], v["s1_star"], v["q"], v["flags"], rho)

    def noise(self) -> dyn.NoiseSpec:
        v = self.values["noise"]
        n = dyn.NoiseSpec(v["family"], v["amplitude"], v["gamma"], v["r"], v["table"] or None)
        return n.scaled(v["scale"]) if v["scale"] != 1.0 else n

    def integrator(self) -> dyn.IntegratorConfig:
        v = self.values["integrator"]
        return dyn.IntegratorConfig(dt_max=v["dt"], c_step=v["c_step"], rtol=v["rtol"], atol=v["atol"],
                                    seed=self["run.seed"], paths=self["run.paths"], norm_order=v["norm_order"])

    def budget(self, N: int | None = None, stream: int = 0) -> ms.Budget:
        e = self.values["experiment"]
        return ms.Budget(N=self.N if N is None else N, horizon=e["horizon"], dt=self["integrator.dt"],
                         paths=self["run.paths"], burn_in=e["burn_in"], n_batches=e["batches"],
                         sample_every=e["sample_every"], reservoir=e["reservoir"],
                         reservoir_every=e["reservoir_every"], seed=self["run.seed"], stream=stream)


def _raw_values(text: str) -> tuple[dict, list]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   default_section="__none__")
    cp.optionxform = str
    errors = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([("<document>", "INI text with [section] headers", str(exc).splitlines()[0])])
    raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            errors.append((sec, "a known section (" + ", ".join(SCHEMA) + ")", "unknown section"))
            continue
        raw[sec] = {}
        for key, val in cp.items(sec):
            if key not in SCHEMA[sec]:
                errors.append((f"{sec}.{key}", "a known key (" + ", ".join(SCHEMA[sec]) + ")", "unknown key"))
                continue
            raw[sec][key] = val
    return raw, errors


def parse_config(text: str, kind: str | None = None) -> RunConfig:
    """Parse and validate INI text; all problems are reported together."""
    raw, errors = _raw_values(text)
    vals = {}
    for sec, fields in SCHEMA.items():
        vals[sec] = {}
        for key, fld in fields.items():
            path = f"{sec}.{key}"
            if key in raw.get(sec, {}):
                txt = raw[sec][key]
                try:
                    vals[sec][key] = fld.parse(txt)
                except (ValueError, TypeError):
                    errors.append((path, fld.expected, repr(txt)))
                    vals[sec][key] = fld.default
            else:
                vals[sec][key] = fld.default
    if kind is not None:
        vals["run"]["kind"] = kind
    return validate(vals, errors)


def validate(vals: dict, errors: list | None = None) -> RunConfig:
    errors = list(errors or [])
    kind = vals["run"]["kind"]
    err = lambda p, e, g: errors.append((p, e, g))
    if vals["model"]["variant"] in (REQUIRED, None):
        vals["model"]["variant"] = REQUIRED
        if kind != "verify" and not any(e[0] == "model.variant" for e in errors):
            err("model.variant", "one of " + "|".join(mdl.MODEL_NAMES), "missing")
    if vals["run"]["seed"] < 0:
        err("run.seed", "a nonnegative integer", str(vals["run"]["seed"]))
    if vals["run"]["paths"] < 1:
        err("run.paths", "a positive integer", str(vals["run"]["paths"]))
    if vals["model"]["N"] < 1:
        err("model.N", "a positive integer", str(vals["model"]["N"]))
    if vals["model"]["mode_radius"] < 0:
        err("model.mode_radius", "a nonnegative integer", str(vals["model"]["mode_radius"]))
    if len(vals["model"]["coriolis"]) != 3:
        err("model.coriolis", "three comma-separated reals", str(vals["model"]["coriolis"]))
    d = vals["dissipation"]
    if d["s_star"] < 4:
        err("dissipation.s_star", "a real >= 4", repr(d["s_star"]))
    if not d["s1_star"] > d["s_star"]:
        err("dissipation.s1_star", "a real > s_star (s1_star > s_star rule)", repr(d["s1_star"]))
    if d["q"] < 2 or d["q"] % 2:
        err("dissipation.q", "an even integer >= 2 (q-even rule)", repr(d["q"]))
    if len(d["flags"]) != 3 or any(f not in (0, 1) for f in d["flags"]) or not any(d["flags"]):
        err("dissipation.flags", "three 0/1 flags, not all zero", str(d["flags"]))
    if d["rho_delta"] <= 0:
        err("dissipation.rho_delta", "a positive real", repr(d["rho_delta"]))
    if d["rho_c"] < 0 or d["rho_beta"] < 0:
        err("dissipation.rho_c", "nonnegative rho_c and rho_beta", f"{d['rho_c']!r}, {d['rho_beta']!r}")
    n = vals["noise"]
    if n["amplitude"] < 0 or n["scale"] < 0:
        err("noise.amplitude", "nonnegative amplitude and scale", f"{n['amplitude']!r}, {n['scale']!r}")
    if n["family"] == "table" and not n["table"]:
        err("noise.table", "amplitudes for the table family", "empty")
    g = vals["integrator"]
    if g["dt"] <= 0:
        err("integrator.dt", "a positive real", repr(g["dt"]))
    if not 0 < g["c_step"] <= 1:
        err("integrator.c_step", "a real in (0, 1]", repr(g["c_step"]))
    e = vals["experiment"]
    if e["alpha"] <= 0:
        err("experiment.alpha", "a positive real", repr(e["alpha"]))
    if not e["alphas"] or any(a <= 0 for a in e["alphas"]) or list(e["alphas"]) != sorted(e["alphas"], reverse=True):
        err("experiment.alphas", "a nonempty decreasing list of positive reals", str(e["alphas"]))
    if list(e["Ns"]) != sorted(e["Ns"]) or any(x < 1 for x in e["Ns"]):
        err("experiment.Ns", "an increasing list of positive truncations", str(e["Ns"]))
    if e["horizon"] <= 0:
        err("experiment.horizon", "a positive real", repr(e["horizon"]))
    if not 0 <= e["burn_in"] < 1:
        err("experiment.burn_in", "a fraction in [0, 1)", repr(e["burn_in"]))
    if e["batches"] < 2:
        err("experiment.batches", "an integer >= 2", repr(e["batches"]))
    if e["sample_every"] < 1 or e["reservoir_every"] < 1 or e["reservoir"] < 0:
        err("experiment.sample_every", "positive sampling strides and a nonnegative reservoir",
            f"{e['sample_every']}, {e['reservoir_every']}, {e['reservoir']}")
    bad = [c for c in e["checks"] if c not in CHECKS]
    if bad:
        err("experiment.checks", "names from " + "|".join(CHECKS), ", ".join(bad))
    if e["balance_horizon"] <= 0 or e["balance_dt"] <= 0 or e["invariance_t"] < 0:
        err("experiment.balance_horizon", "positive balance horizon/dt and nonnegative invariance_t",
            f"{e['balance_horizon']}, {e['balance_dt']}, {e['invariance_t']}")
    en = vals["ensemble"]
    if not en["i_list"] or any(i < 1 for i in en["i_list"]):
        err("ensemble.i_list", "positive integers", str(en["i_list"]))
    if en["j_max"] < 1:
        err("ensemble.j_max", "a positive integer", str(en["j_max"]))
    if en["r"] > d["s_star"] or en["r"] < 0:
        err("ensemble.r", "a real in [0, s_star]", repr(en["r"]))
    if en["c_T"] is not None and en["c_T"] <= 0:
        err("ensemble.c_T", "a positive real or 'auto'", repr(en["c_T"]))
    v = vals["verify"]
    if v["trials"] < 1:
        err("verify.trials", "a positive integer", str(v["trials"]))
    badm = [x for x in v["models"] if x not in mdl.MODEL_NAMES]
    if badm:
        err("verify.models", "names from " + "|".join(mdl.MODEL_NAMES), ", ".join(badm))
    if not errors and vals["model"]["variant"] is not REQUIRED:
        mv = vals["model"]
        if mv["variant"] == "GSQG" and mv["alpha_sqg"] > 0.5 and not mv["allow_singular"]:
            err("model.alpha_sqg", "<= 0.5 unless allow_singular is set", repr(mv["alpha_sqg"]))
        if mv["variant"] in ("Sabra", "GOY") and (mv["lam"] <= 1 or mv["k0"] <= 0):
            err("model.lam", "lam > 1 and k0 > 0", f"{mv['lam']!r}, {mv['k0']!r}")
    if errors:
        raise ConfigError(errors)
    if vals["model"]["variant"] is REQUIRED:
        vals["model"]["variant"] = None
    return RunConfig(vals)


def serialize(cfg: RunConfig) -> str:
    """Canonical INI text with every key written out (defaults included)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   default_section="__none__")
    cp.optionxform = str
    for sec, fields in SCHEMA.items():
        cp.add_section(sec)
        for key, fld in fields.items():
            val = cfg.values[sec][key]
            if val is None and fld.default is REQUIRED:
                continue
            cp.set(sec, key, fld.dump(val))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()
