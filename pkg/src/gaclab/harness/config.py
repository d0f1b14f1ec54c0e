"""Flat ``key = value`` config files for ablation sweeps.

Example::

    [ablation]
    env = directional-shell
    dim = 6
    r_star = 1.0
    steps = 8000
    seeds = 0, 1, 2

    [variant:default]
    radius = 1.0

    [variant:no-kappa]
    radius = 1.0
    no_kappa = true

Keys in ``[ablation]`` other than the environment settings and ``seeds`` are
shared overrides applied to every variant; a variant's own keys win.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from gaclab.agents import TrainConfig

ENV_KEYS = ("env", "dim", "r_star", "eval_episodes")
VARIANT_PREFIX = "variant:"


def _coerce_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce_overrides(raw):
    """Convert string overrides to the types of the matching TrainConfig fields.

    Unknown keys raise ``KeyError`` naming the key.
    """
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, text in raw.items():
        if key not in types:
            raise KeyError(f"unknown training setting {key!r}")
        t = types[key]
        if t in (bool, "bool"):
            out[key] = _coerce_bool(text)
        elif t in (int, "int"):
            out[key] = int(text)
        elif t in (float, "float"):
            out[key] = float(text)
        else:
            out[key] = text.strip()
    return out


def parse_int_list(text):
    return [int(x) for x in text.replace(",", " ").split()]


def parse_float_list(text):
    return [float(x) for x in text.replace(",", " ").split() if x]


@dataclass
class Variant:
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass
class AblationPlan:
    env: str
    dim: int
    r_star: float = 1.0
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: [0])
    variants: list = field(default_factory=list)

    def runs(self):
        """``(variant, seed)`` pairs in the order they are reported."""
        return [(v, s) for v in self.variants for s in self.seeds]


def load_ablation(path):
    """Read an ablation plan; raises ``ValueError``/``KeyError`` on bad content."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    if "ablation" not in cp:
        raise ValueError(f"{path}: missing [ablation] section")
    base = dict(cp["ablation"])
    if "env" not in base or "dim" not in base:
        raise ValueError(f"{path}: [ablation] needs env and dim")
    plan = AblationPlan(env=base.pop("env").strip(), dim=int(base.pop("dim")))
    if "r_star" in base:
        plan.r_star = float(base.pop("r_star"))
    if "eval_episodes" in base:
        plan.eval_episodes = int(base.pop("eval_episodes"))
    if "seeds" in base:
        plan.seeds = parse_int_list(base.pop("seeds"))
    shared = coerce_overrides(base)
    for section in cp.sections():
        if not section.startswith(VARIANT_PREFIX):
            if section != "ablation":
                raise ValueError(f"{path}: unknown section [{section}]")
            continue
        name = section[len(VARIANT_PREFIX):].strip()
        own = coerce_overrides(dict(cp[section]))
        plan.variants.append(Variant(name, {**shared, **own}))
    return plan
