"""Run configuration shared by the orchestrator, workers, and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .designs import ALL_METHODS, SubclassParams
from .glm import LassoConfig
from .propensity import LASSO_LOGISTIC


class ConfigError(ValueError):
    pass


def derive_seed(base: int, *parts) -> int:
    """Stable sub-seed from a base seed and any hashable integer parts."""
    key = tuple(int(p) if isinstance(p, (int, np.integer)) else _stable_int(p) for p in parts)
    return int(np.random.SeedSequence((int(base),) + key).generate_state(1)[0])


def _stable_int(part) -> int:
    return int.from_bytes(str(part).encode("utf-8"), "little") % (2**31)


@dataclass(frozen=True)
class EngineConfig:
    """Everything a designer needs to estimate scores, build candidate
    designs, and evaluate balance. Serializable onto the wire protocol."""

    model_kind: str = LASSO_LOGISTIC
    methods: tuple[str, ...] = ALL_METHODS
    balance_threshold: float = 0.2
    caliper_multiplier: float = 0.2
    optimal_inflation: float = 1.0
    trim: bool = True
    subclass: SubclassParams = field(default_factory=SubclassParams)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    selection_criterion: str = "d_max"
    base_seed: int = 0
    interaction_cap: int = 200      # all-data designer's pairwise-term budget

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one design method must be enabled")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if self.balance_threshold <= 0 or self.caliper_multiplier <= 0:
            raise ConfigError("thresholds must be positive")
        if self.subclass.p_threshold <= 0 or self.subclass.min_subclass <= 0 \
                or self.subclass.min_group <= 0:
            raise ConfigError("subclassification thresholds must be positive")
        if self.selection_criterion not in ("d_max", "d_plus"):
            raise ConfigError(f"unknown selection criterion {self.selection_criterion!r}")

    def lasso_for(self, designer_id, stage: str) -> LassoConfig:
        """Per-designer, per-stage CV fold seed."""
        stage_code = {"conditional": 1, "final": 2}[stage]
        return replace(
            self.lasso, seed=derive_seed(self.base_seed, _stable_int(designer_id), stage_code)
        )

    def to_payload(self) -> dict:
        d = {
            "model_kind": self.model_kind,
            "methods": list(self.methods),
            "balance_threshold": self.balance_threshold,
            "caliper_multiplier": self.caliper_multiplier,
            "optimal_inflation": self.optimal_inflation,
            "trim": self.trim,
            "selection_criterion": self.selection_criterion,
            "base_seed": self.base_seed,
            "interaction_cap": self.interaction_cap,
            "subclass": asdict(self.subclass),
            "lasso": {k: v for k, v in asdict(self.lasso).items() if k != "lambdas"},
        }
        return d

    @classmethod
    def from_payload(cls, d: dict) -> "EngineConfig":
        plain = (
            "model_kind", "balance_threshold", "caliper_multiplier",
            "optimal_inflation", "trim", "selection_criterion", "base_seed",
            "interaction_cap",
        )
        unknown = set(d) - set(plain) - {"methods", "subclass", "lasso"}
        if unknown:
            raise ConfigError(f"unknown engine config keys {sorted(unknown)}")
        kwargs = {k: d[k] for k in plain if k in d}
        if "methods" in d:
            kwargs["methods"] = tuple(d["methods"])
        if "subclass" in d:
            kwargs["subclass"] = SubclassParams(**d["subclass"])
        if "lasso" in d:
            kwargs["lasso"] = LassoConfig(
                **{k: v for k, v in d["lasso"].items() if k != "lambdas"}
            )
        return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    """CLI-level configuration: simulation shape, mode, and transport on top
    of the designer-level engine settings."""

    seed: int = 0
    n: int = 10000
    p: int = 120
    m: int = 6
    setting: str = "one"
    mode: str = "distributed"       # distributed | all-data | oracle
    transport: str = "in-process"   # in-process | multi-process
    replicates: int = 1
    treatment_column: str = "treatment"
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if self.setting not in ("one", "two"):
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.mode not in ("distributed", "all-data", "oracle"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.transport not in ("in-process", "multi-process"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.n < 1 or self.p < 1 or self.m < 1 or self.replicates < 1:
            raise ConfigError("n, p, m, replicates must be positive")

    def resolved(self) -> dict:
        d = {
            "seed": self.seed, "n": self.n, "p": self.p, "m": self.m,
            "setting": self.setting, "mode": self.mode, "transport": self.transport,
            "replicates": self.replicates, "treatment_column": self.treatment_column,
            "engine": self.engine.to_payload(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        engine = d.pop("engine", {})
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(engine=EngineConfig.from_payload(engine) if engine else EngineConfig(), **known)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.resolved(), fh, indent=2, sort_keys=True)
            fh.write("\n")
