"""Structured config files for the CLI: YAML key-value text with strict
unknown-key rejection and documented defaults (the baseline run parameters
dt=0.01, T=20, alpha=100, beta=inf, theta=0, kappa=1/dt, lambda1=1)."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import yaml

from .dynamics import CboParams, DiffusionType, InitSpec, Schedule
from .harness import ExperimentConfig, SuccessRule, TrialProblem, cs_experiment_config
from .objectives import (
    CsObjective,
    Rastrigin,
    Sphere,
    generate_cs_instance,
    toy_stochastic_objective,
)
from .rng import RngStream
from .theory import AssumptionConstants


class ConfigError(ValueError):
    pass


# section -> key -> (type, default); None default means "optional, absent"
_SCHEMA = {
    "objective": {
        "kind": (str, "sphere"),
        "dimension": (int, 4),
        "n_batches": (int, 1),
    },
    "params": {
        "lambda1": (float, 1.0),
        "lambda2": (float, 0.0),
        "lambda3": (float, 0.0),
        "sigma1": (float, 0.0),
        "sigma2": (float, 0.0),
        "sigma3": (float, 0.0),
        "alpha": (float, 100.0),
        "beta": (float, math.inf),
        "theta": (float, 0.0),
        "kappa": (float, None),  # defaults to 1/dt
        "dt": (float, 0.01),
        "diffusion": (str, "anisotropic"),
    },
    "schedule": {
        "alpha_rule": (str, "constant"),
        "sigma_rule": (str, "constant"),
        "epoch_length": (int, 100),
    },
    "experiment": {
        "n_particles": (int, 100),
        "horizon_T": (float, 20.0),
        "trials": (int, 100),
        "seed": (int, 0),
        "n_consensus": (int, None),
    },
    "init": {
        "kind": (str, "gaussian"),
        "mean": (float, 0.0),
        "std": (float, 1.0),
        "low": (float, -1.0),
        "high": (float, 1.0),
    },
    "success": {
        "kind": (str, "consensus_near_minimizer"),
        "threshold": (float, 0.25),
        "norm": (str, "inf"),
        "support_threshold": (float, 0.01),
        "residual_tol": (float, 1e-4),
    },
    "sweep": {
        "x_grid": (list, None),
        "y_grid": (list, None),
        "sigma2_coupling": (str, "zero"),
    },
    "cs": {
        "d": (int, 50),
        "m": (int, 25),
        "s": (int, 2),
        "mu": (float, 0.01),
        "p": (float, 1.0),
    },
    "theory": {
        "eta": (float, 1.0),
        "nu": (float, 0.5),
        "R0": (float, 1.0),
        "E_inf": (float, 1.0),
        "C_grad": (float, None),
        "vartheta": (float, 0.25),
        "eps": (float, 1e-4),
        "cases": (int, 1000),
    },
    "gradcheck": {
        "points": (int, 100),
        "h": (float, 1e-6),
        "rel_tol": (float, 1e-5),
    },
}


def _coerce(section: str, key: str, typ, raw):
    if raw is None:
        return None
    if typ is float:
        if isinstance(raw, str):
            if raw.strip().lower() in ("inf", "+inf", ".inf", "infinity"):
                return math.inf
            try:
                return float(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}")
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}")
        return float(raw)
    if typ is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{section}.{key}: expected an integer, got {raw!r}")
        return raw
    if typ is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{section}.{key}: expected a string, got {raw!r}")
        return raw
    if typ is list:
        if not isinstance(raw, list):
            raise ConfigError(f"{section}.{key}: expected a list, got {raw!r}")
        return list(raw)
    raise AssertionError(typ)


@dataclass
class ResolvedConfig:
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def to_yaml(self) -> str:
        dump = {}
        for section, values in self.sections.items():
            out = {}
            for key, val in values.items():
                if isinstance(val, float) and math.isinf(val):
                    val = "inf"
                out[key] = val
            dump[section] = out
        return yaml.safe_dump(dump, sort_keys=True)

    # ---- builders -------------------------------------------------

    def build_params(self) -> CboParams:
        p = dict(self["params"])
        diffusion = p.pop("diffusion")
        try:
            diffusion = DiffusionType(diffusion)
        except ValueError:
            raise ConfigError(f"params.diffusion: unknown type {diffusion!r}")
        if p["kappa"] is None:
            p["kappa"] = 1.0 / p["dt"]
        try:
            return CboParams(diffusion=diffusion, **p)
        except ValueError as err:
            raise ConfigError(str(err))

    def build_schedule(self) -> Schedule:
        try:
            return Schedule(**self["schedule"])
        except ValueError as err:
            raise ConfigError(str(err))

    def build_init(self) -> InitSpec:
        try:
            return InitSpec(**self["init"])
        except ValueError as err:
            raise ConfigError(str(err))

    def build_success(self) -> SuccessRule:
        try:
            return SuccessRule(**self["success"])
        except ValueError as err:
            raise ConfigError(str(err))

    def build_constants(self) -> AssumptionConstants:
        t = self["theory"]
        try:
            return AssumptionConstants(
                eta=t["eta"], nu=t["nu"], R0=t["R0"], E_inf=t["E_inf"], C_grad=t["C_grad"]
            )
        except ValueError as err:
            raise ConfigError(str(err))

    def objective_factory(self):
        """Returns (factory, x_star-known flag). CS objectives generate a
        fresh instance per trial."""
        spec = self["objective"]
        kind = spec["kind"]
        d = spec["dimension"]
        import numpy as np

        origin = np.zeros(d)
        if kind == "sphere":
            obj = Sphere(d)
            return lambda rng: TrialProblem(obj, x_star=origin)
        if kind == "rastrigin":
            obj = Rastrigin(d)
            return lambda rng: TrialProblem(obj, x_star=origin)
        if kind == "toy":
            obj = toy_stochastic_objective(d, spec["n_batches"], seed=self["experiment"]["seed"])
            return lambda rng: TrialProblem(obj, x_star=origin)
        if kind == "cs":
            cs = self["cs"]

            def factory(rng: RngStream) -> TrialProblem:
                inst = generate_cs_instance(
                    cs["d"], cs["m"], cs["s"], cs["mu"], cs["p"],
                    rng.for_trial(rng.trial + 1_000_003),
                )
                return TrialProblem(CsObjective(inst), x_star=inst.ground_truth, instance=inst)

            return factory
        raise ConfigError(f"objective.kind: unknown objective {kind!r}")

    def build_experiment(self) -> ExperimentConfig:
        exp = self["experiment"]
        try:
            return ExperimentConfig(
                objective_factory=self.objective_factory(),
                params=self.build_params(),
                schedule=self.build_schedule(),
                n_particles=exp["n_particles"],
                horizon_T=exp["horizon_T"],
                trials=exp["trials"],
                seed=exp["seed"],
                success=self.build_success(),
                init=self.build_init(),
                n_consensus=exp["n_consensus"],
            )
        except ValueError as err:
            raise ConfigError(str(err))


def resolve(raw: dict | None) -> ResolvedConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if raw[section] is not None and not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
    sections = {}
    for section, keys in _SCHEMA.items():
        given = raw.get(section) or {}
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section {section!r}")
        resolved = {}
        for key, (typ, default) in keys.items():
            if key in given:
                resolved[key] = _coerce(section, key, typ, given[key])
            else:
                resolved[key] = default
        sections[section] = resolved
    return ResolvedConfig(sections)


def load_config(path: str | None, seed_override: int | None = None) -> ResolvedConfig:
    """Parse a YAML config file, fill defaults, and apply the seed precedence
    chain: CLI flag > CBO_SEED env var > file > default."""
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    cfg = resolve(raw)
    env_seed = os.environ.get("CBO_SEED")
    if env_seed is not None:
        try:
            cfg["experiment"]["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"CBO_SEED: expected an integer, got {env_seed!r}")
    if seed_override is not None:
        cfg["experiment"]["seed"] = int(seed_override)
    return cfg
