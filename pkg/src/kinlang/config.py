"""Flat key = value experiment configuration files and the run manifest.

One assignment per line, '#' starts a comment, sections are implied by key
prefixes (potential., scheme., run., lyapunov., analysis.). Unknown keys are
hard errors so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .potentials import Potential, State, make_potential
from .sampler import CloudInit, RunSpec
from .scheme import DEFAULT_ESCAPE_ENERGY, LyapunovParams, SchemeParams

KNOWN_KEYS = {
    "potential.kind",
    "potential.n_particles",
    "potential.space_dim",
    "potential.confinement_stiffness",
    "potential.lj_epsilon",
    "potential.lj_sigma",
    "potential.stiffness",
    "potential.well_scale",
    "potential.probe_count",
    "scheme.delta",
    "scheme.gamma",
    "scheme.beta",
    "scheme.l",
    "scheme.kind",
    "scheme.escape_energy",
    "run.n_chains",
    "run.n_steps",
    "run.burn_in",
    "run.seed",
    "run.record_stride",
    "run.init_kind",
    "run.init_x",
    "run.init_y",
    "run.init_sigma",
    "run.threads",
    "observables",
    "lyapunov.b",
    "lyapunov.r1",
    "lyapunov.r2",
    "lyapunov.n_probes",
    "lyapunov.n_samples",
    "lyapunov.h_lo",
    "lyapunov.h_hi",
    "lyapunov.probe_x",
    "lyapunov.probe_y",
    "analysis.delta_grid",
    "analysis.t",
    "analysis.reference",
    "analysis.observable",
    "analysis.mu_reference",
    "analysis.scale_chains",
}


@dataclass
class ExperimentConfig:
    path: str
    text: str
    values: dict[str, str] = field(default_factory=dict)

    # typed getters -------------------------------------------------------
    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required config key: {key!r}")
        return default

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.get_str(key, None if default is None else repr(default))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a number: {raw!r}") from None

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self.get_str(key, None if default is None else str(default))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not an integer: {raw!r}") from None

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.get_str(key, "true" if default else "false").lower()
        if raw in ("true", "yes", "1"):
            return True
        if raw in ("false", "no", "0"):
            return False
        raise ConfigError(f"config key {key!r} is not a boolean: {raw!r}")

    def get_float_list(self, key: str, default: str | None = None) -> list[float]:
        raw = self.get_str(key, default)
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a comma-separated number list") from None


def parse_config_text(text: str, path: str = "<memory>") -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {body!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            hint = difflib.get_close_matches(key, KNOWN_KEYS, n=1)
            extra = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"{path}:{lineno}: unknown config key: {key!r}{extra}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key: {key!r}")
        values[key] = value
    return ExperimentConfig(path=path, text=text, values=values)


def parse_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_config_text(text, path)


# ---------------------------------------------------------------------------
# object builders


def build_potential(cfg: ExperimentConfig) -> Potential:
    kind = cfg.get_str("potential.kind", "harmonic")
    return make_potential(
        kind,
        n_particles=cfg.get_int("potential.n_particles", 2 if kind.startswith("lennard") else 1),
        space_dim=cfg.get_int("potential.space_dim", 2 if kind.startswith("lennard") else 1),
        confinement_stiffness=cfg.get_float("potential.confinement_stiffness", 1.0),
        lj_epsilon=cfg.get_float("potential.lj_epsilon", 1.0),
        lj_sigma=cfg.get_float("potential.lj_sigma", 1.0),
        stiffness=cfg.get_float("potential.stiffness", 1.0),
        well_scale=cfg.get_float("potential.well_scale", 1.0),
    )


def build_scheme_params(cfg: ExperimentConfig) -> SchemeParams:
    return SchemeParams(
        delta=cfg.get_float("scheme.delta", 0.01),
        gamma=cfg.get_float("scheme.gamma", 1.0),
        beta=cfg.get_float("scheme.beta", 1.0),
        l=cfg.get_float("scheme.l", 0.1),
    )


def build_lyapunov_params(cfg: ExperimentConfig, beta: float) -> LyapunovParams:
    return LyapunovParams(
        b=cfg.get_float("lyapunov.b", 0.5 * beta),
        r1=cfg.get_float("lyapunov.r1", 10.0),
        r2=cfg.get_float("lyapunov.r2", 20.0),
    )


def build_init(cfg: ExperimentConfig, potential: Potential):
    kind = cfg.get_str("run.init_kind", "minimum")
    if "run.init_x" in cfg.values:
        x = np.array(cfg.get_float_list("run.init_x"))
    else:
        x = potential.minimum()
    if "run.init_y" in cfg.values:
        y = np.array(cfg.get_float_list("run.init_y"))
    else:
        y = np.zeros(potential.dim)
    if x.shape[0] != potential.dim or y.shape[0] != potential.dim:
        raise ConfigError(
            f"initial state has dimension {x.shape[0]}/{y.shape[0]}, "
            f"potential needs {potential.dim}"
        )
    center = State(x, y)
    if kind in ("minimum", "fixed"):
        return center
    if kind == "cloud":
        return CloudInit(center, sigma=cfg.get_float("run.init_sigma", 0.1))
    raise ConfigError(f"unknown run.init_kind: {kind!r}")


def build_run_spec(
    cfg: ExperimentConfig,
    potential: Potential,
    seed_override: int | None = None,
    threads_override: int | None = None,
) -> RunSpec:
    n_steps = cfg.get_int("run.n_steps", 1000)
    burn = cfg.get_int("run.burn_in", -1)
    return RunSpec(
        n_chains=cfg.get_int("run.n_chains", 1),
        n_steps=n_steps,
        master_seed=seed_override if seed_override is not None else cfg.get_int("run.seed", 1),
        init=build_init(cfg, potential),
        burn_in=None if burn < 0 else burn,
        record_stride=cfg.get_int("run.record_stride", 1),
        threads=threads_override if threads_override is not None else cfg.get_int("run.threads", 1),
        escape_energy=cfg.get_float("scheme.escape_energy", DEFAULT_ESCAPE_ENERGY),
    )


# ---------------------------------------------------------------------------
# run manifest


def config_hash(text: str) -> str:
    """64-bit content hash of the config file, hex-encoded."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    master_seed: int
    duration_seconds: float
    outputs: list[str]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.__dict__, f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def read(path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            return RunManifest(**json.load(f))


class ManifestTimer:
    def __init__(self):
        self.t0 = time.perf_counter()

    def build(self, cfg: ExperimentConfig, seed: int, outputs: list[str], version: str):
        return RunManifest(
            config_hash=config_hash(cfg.text),
            tool_version=version,
            master_seed=seed,
            duration_seconds=time.perf_counter() - self.t0,
            outputs=sorted(outputs),
        )
