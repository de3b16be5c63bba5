"""Run configuration: sectioned key-value files, validation, hashing.

Configs are flat INI-style text with sections velocity, collision, euler,
prandtl, knudsen, study.  Unknown sections or keys are rejected so a typo
cannot silently fall back to a default; values inherit the type of their
default.  The canonical dump (sorted, normalized floats) feeds a sha256
hash that tags checkpoints and reports.
"""

import configparser
import hashlib

from .collision import CollisionModel
from .errors import ConfigError
from .velocity import build_grid

DEFAULTS = {
    "velocity": {
        "n_per_axis": 12,
        "v_max": 6.0,
    },
    "collision": {
        "kind": "bgk",
        "bgk_nu_scale": 1.0,
        "gamma0": 0.0,
    },
    "euler": {
        "xmax": 1.0,
        "nx": 200,
        "tau": 0.06,
        "cfl": 0.4,
        "rho_ref": 1.0,
        "T_ref": 1.0,
        "rho_amp": 0.1,
        "T_amp": 0.05,
        "shear_amp": 0.1,
        "center": 0.55,
        "width": 0.12,
        "flat_margin": 0.15,
        "ramp_width": 0.15,
    },
    "prandtl": {
        "zmax": 20.0,
        "nz": 201,
        "cfl": 0.45,
        "mu": 1.0,
        "kappa": 1.0,
        "slip_mode": "published",
    },
    "knudsen": {
        "ximax": 30.0,
        "nxi": 301,
        "tol": 1e-9,
    },
    "study": {
        "epsilons": (0.04, 0.02, 0.01, 0.005),
        "t_star": 0.05,
        "K": 2,
        "ell": 9,
        "seed": 20240817,
        "stretch": 1.05,
        "wall_cells": 8,
    },
}

_SLIP_MODES = ("published", "flux_consistent", "discrete")
_KINDS = ("bgk", "hardsphere")


def _coerce(section, key, raw):
    ref = DEFAULTS[section][key]
    try:
        if isinstance(ref, tuple):
            parts = raw.replace(",", " ").split()
            return tuple(float(p) for p in parts)
        if isinstance(ref, int) and not isinstance(ref, bool):
            return int(raw)
        if isinstance(ref, float):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError("bad value for %s.%s: %r" % (section, key, raw))


class RunConfig:
    """Validated configuration with canonical serialization."""

    def __init__(self, sections):
        self.sections = sections

    def __getitem__(self, section):
        return self.sections[section]

    def get(self, section, key):
        return self.sections[section][key]

    def dump(self):
        lines = []
        for sec in sorted(self.sections):
            lines.append("[%s]" % sec)
            for key in sorted(self.sections[sec]):
                val = self.sections[sec][key]
                if isinstance(val, tuple):
                    txt = " ".join("%.17g" % v for v in val)
                elif isinstance(val, float):
                    txt = "%.17g" % val
                else:
                    txt = str(val)
                lines.append("%s = %s" % (key, txt))
            lines.append("")
        return "\n".join(lines)

    def hash(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()


def _validate(sections):
    pos = [("velocity", "v_max"), ("euler", "xmax"), ("euler", "tau"),
           ("euler", "rho_ref"), ("euler", "T_ref"), ("euler", "width"),
           ("prandtl", "mu"), ("prandtl", "kappa"), ("knudsen", "ximax"),
           ("knudsen", "tol"), ("study", "t_star")]
    for sec, key in pos:
        if not sections[sec][key] > 0.0:
            raise ConfigError("%s.%s must be positive" % (sec, key))
    if sections["velocity"]["n_per_axis"] < 4:
        raise ConfigError("velocity.n_per_axis must be at least 4")
    if sections["euler"]["nx"] < 16:
        raise ConfigError("euler.nx must be at least 16")
    for sec in ("euler", "prandtl"):
        if not 0.0 < sections[sec]["cfl"] < 1.0:
            raise ConfigError("%s.cfl must lie in (0, 1)" % sec)
    if sections["collision"]["kind"] not in _KINDS:
        raise ConfigError("collision.kind must be one of %s" % (_KINDS,))
    if sections["collision"]["bgk_nu_scale"] <= 0.0:
        raise ConfigError("collision.bgk_nu_scale must be positive")
    if sections["prandtl"]["slip_mode"] not in _SLIP_MODES:
        raise ConfigError("prandtl.slip_mode must be one of %s"
                          % (_SLIP_MODES,))
    if sections["prandtl"]["zmax"] < 6.0:
        raise ConfigError("prandtl.zmax must be at least 6")
    if sections["prandtl"]["nz"] < 11 or sections["knudsen"]["nxi"] < 31:
        raise ConfigError("layer grids too coarse (nz >= 11, nxi >= 31)")
    st = sections["study"]
    if st["K"] not in (0, 1, 2):
        raise ConfigError("study.K must be 0, 1, or 2")
    if st["ell"] < 9:
        raise ConfigError("study.ell must be at least 9")
    eps = st["epsilons"]
    if any(e <= 0.0 for e in eps):
        raise ConfigError("study.epsilons must be positive")
    if any(eps[i] <= eps[i + 1] for i in range(len(eps) - 1)):
        raise ConfigError("study.epsilons must be strictly decreasing")
    if not 1.0 <= st["stretch"] <= 1.05:
        raise ConfigError("study.stretch must lie in [1, 1.05]")
    if st["wall_cells"] < 4:
        raise ConfigError("study.wall_cells must be at least 4")
    if st["seed"] < 0:
        raise ConfigError("study.seed must be nonnegative")


def parse_text(text):
    """RunConfig from config text; unknown sections/keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError("unparseable config: %s" % err)
    sections = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in DEFAULTS:
            raise ConfigError("unknown config section [%s]" % sec)
        for key, raw in parser[sec].items():
            if key not in DEFAULTS[sec]:
                raise ConfigError("unknown config key %s.%s" % (sec, key))
            sections[sec][key] = _coerce(sec, key, raw)
    _validate(sections)
    return RunConfig(sections)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError("cannot read config %s: %s" % (path, err))
    return parse_text(text)


def default_config():
    return parse_text("")


def velocity_grid(cfg):
    v = cfg["velocity"]
    return build_grid(v["n_per_axis"], v["v_max"])


def collision_model(cfg):
    c = cfg["collision"]
    return CollisionModel(c["kind"], gamma0=c["gamma0"],
                          bgk_nu_scale=c["bgk_nu_scale"])
