"""Run configuration: ``key = value`` text with dotted sections, validated by pydantic.

Layout::

    [run]                      name, seed, experiments (comma list)
    [experiment]               ExperimentConfig defaults shared by all experiments
    [experiment.<name>]        overrides for one experiment (field, diffusion,
                               equilibration, lab_vs_proper, proper_growth)
    [compare] [markov_limit] [equilibration] [lab_vs_proper] [proper_growth]
    [validate] [kubo]          options of the corresponding checks and commands

Every problem is reported as a :class:`ConfigError` naming the file, line,
section and key.
"""
from __future__ import annotations

import configparser
import re
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .harness import ExperimentConfig

EXPERIMENTS = ("field", "diffusion", "compare", "markov_limit", "equilibration", "lab_vs_proper", "proper_growth")
DERIVED = ("compare", "markov_limit")        # checks on other experiments, no section of their own
TUPLE_KEYS = {"initial_p", "window", "experiments", "bianchi_steps"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class _Options(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


class RunOptions(_Options):
    name: str = "run"
    seed: int = Field(0, ge=0)
    experiments: tuple[Literal[EXPERIMENTS], ...] = ()


class CompareOptions(_Options):
    rel_tol: float = Field(0.15, ge=0)
    z_max: float = Field(5.0, gt=0)
    window: tuple[float, float] | None = None


class MarkovLimitOptions(_Options):
    window: tuple[float, float] = (5.0, 10.0)
    rel_tol: float = Field(0.1, ge=0)
    z_max: float = Field(5.0, gt=0)


class ProperGrowthOptions(_Options):
    z_min: float = Field(5.0, gt=0)


class EquilibrationOptions(_Options):
    min_horizon: float = Field(10.0, ge=0)
    n_bins: int = Field(30, ge=2)
    temperature: float = Field(1.0, gt=0)
    control_temperature: float = Field(2.0, gt=0)
    halving_walkers: int = Field(0, ge=0)


class LabVsProperOptions(_Options):
    growth_factor: float = Field(10.0, gt=1)
    rel_tol: float = Field(0.03, ge=0)


class ValidateOptions(_Options):
    n_realizations: int = Field(200, ge=2)
    n_separations: int = Field(10, ge=1)
    max_separation: float = Field(2.0, gt=0)
    n_positivity: int = Field(1000, ge=1)
    z_max: float = Field(5.0, gt=0)
    bianchi_steps: tuple[float, ...] = (1e-2, 5e-3, 2.5e-3)


class KuboOptions(_Options):
    source: Literal["spectrum", "gaussian", "constant", "power"] = "spectrum"
    amplitude: float = 1.0
    scale: float = Field(1.0, gt=0)
    power: float = 1.0
    grid_extent: float = Field(10.0, gt=0)
    grid_points: int = Field(512, ge=3)
    n_seeds: int = Field(0, ge=0)


SECTIONS = {"run": RunOptions, "compare": CompareOptions, "markov_limit": MarkovLimitOptions,
            "proper_growth": ProperGrowthOptions, "equilibration": EquilibrationOptions,
            "lab_vs_proper": LabVsProperOptions, "validate": ValidateOptions, "kubo": KuboOptions}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    source: str = "<string>"
    run: RunOptions = RunOptions()
    base: ExperimentConfig = ExperimentConfig()
    experiments: dict[str, ExperimentConfig] = {}
    compare: CompareOptions = CompareOptions()
    markov_limit: MarkovLimitOptions = MarkovLimitOptions()
    proper_growth: ProperGrowthOptions = ProperGrowthOptions()
    equilibration: EquilibrationOptions = EquilibrationOptions()
    lab_vs_proper: LabVsProperOptions = LabVsProperOptions()
    validate_: ValidateOptions = Field(ValidateOptions(), alias="validate")
    kubo: KuboOptions = KuboOptions()

    def experiment(self, name: str) -> ExperimentConfig:
        return self.experiments[name]

    def with_seed(self, seed: int) -> "RunConfig":
        exps = {k: v.model_copy(update={"seed": seed}) for k, v in self.experiments.items()}
        return self.model_copy(update={"run": self.run.model_copy(update={"seed": seed}),
                                       "base": self.base.model_copy(update={"seed": seed}),
                                       "experiments": exps})


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map ``(section, key)`` to its 1-based line number."""
    index: dict[tuple[str, str], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"^\[(.+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            index[(section, "")] = n
        elif section is not None and stripped and stripped[0] not in "#;":
            key = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            index[(section, key)] = n
    return index


def _value(key: str, raw: str):
    if key in TUPLE_KEYS:
        parts = [p.strip() for p in raw.split(",")]
        return [p for p in parts if p]
    return raw


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse configuration text; raises :class:`ConfigError` with a line diagnostic."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                       default_section="__none__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {' '.join(str(exc).split())}") from None
    lines = _line_index(text)

    def where(section: str, key: str = "") -> str:
        n = lines.get((section, key)) or lines.get((section, ""))
        return f"{source}:{n}" if n else source

    def build(model, section: str, data: dict, fallback: str | None = None):
        try:
            return model(**data)
        except ValidationError as exc:
            err = exc.errors()[0]
            key = str(err["loc"][0]) if err["loc"] else ""
            sec = section if (section, key) in lines or fallback is None else fallback
            label = f"[{sec}] {key}" if key else f"[{sec}]"
            raise ConfigError(f"{where(sec, key)}: {label}: {err['msg']}") from None

    raw = {s: {k: _value(k, v) for k, v in parser.items(s)} for s in parser.sections()}
    options = {}
    base = raw.pop("experiment", {})
    if "seed" in base:
        raise ConfigError(f"{where('experiment', 'seed')}: [experiment] seed: set the seed in [run]")
    overrides = {}
    for section in list(raw):
        if section.startswith("experiment."):
            name = section.split(".", 1)[1]
            if name not in EXPERIMENTS or name in DERIVED:
                raise ConfigError(f"{where(section)}: [{section}]: unknown experiment {name!r}")
            if "seed" in raw[section]:
                raise ConfigError(f"{where(section, 'seed')}: [{section}] seed: set the seed in [run]")
            overrides[name] = raw.pop(section)
        elif section in SECTIONS:
            options[section] = build(SECTIONS[section], section, raw.pop(section))
        else:
            raise ConfigError(f"{where(section)}: [{section}]: unknown section")
    run = options.get("run", RunOptions())
    wanted = set(run.experiments) | set(overrides)
    if "compare" in wanted:
        wanted |= {"field", "diffusion"}
    if "markov_limit" in wanted:
        wanted.add("field")
    experiments = {}
    for name in EXPERIMENTS:
        if name in DERIVED or name not in wanted:
            continue
        data = {**base, **overrides.get(name, {}), "seed": run.seed}
        data.setdefault("name", name)
        experiments[name] = build(ExperimentConfig, f"experiment.{name}", data, fallback="experiment")
    if "compare" in run.experiments:
        f, d = experiments["field"], experiments["diffusion"]
        if f.horizon != d.horizon or f.checkpoints != d.checkpoints:
            raise ConfigError(f"{where('run', 'experiments')}: [run] experiments: compare needs "
                              "field and diffusion on the same checkpoint grid")
    base_cfg = build(ExperimentConfig, "experiment", {**base, "seed": run.seed})
    return RunConfig(source=source, base=base_cfg, experiments=experiments,
                     **options)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config(text, str(path))
