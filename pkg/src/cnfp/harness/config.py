"""Experiment configuration, read from and written to YAML."""
from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from cnfp.agents.sac import VARIANTS, SacConfig
from cnfp.regions import BatteryRule, WorldLayout


@dataclass
class ExperimentConfig:
    variant: str = "cnfp"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    episodes: int = 500
    max_steps: int = 100
    goal_radius: float = 0.3
    sac: SacConfig = field(default_factory=SacConfig)
    layout: WorldLayout = field(default_factory=WorldLayout)
    rule: BatteryRule = field(default_factory=BatteryRule)
    # Deterministic evaluation rollouts every N episodes; 0 disables them.
    eval_every: int = 0
    eval_episodes: int = 5
    output_dir: str = "runs"
    # Wall-clock time breaks byte-identical metrics, so by default it goes to
    # timing.csv only and the metrics "seconds" column is written as 0.
    record_wall_clock: bool = False
    # Abort a run after this many consecutive skipped (non-finite) updates.
    max_bad_updates: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.episodes <= 0:
            raise ValueError("episode budget must be positive")

    def to_dict(self):
        return {
            "variant": self.variant,
            "seeds": list(self.seeds),
            "episodes": self.episodes,
            "max_steps": self.max_steps,
            "goal_radius": self.goal_radius,
            "sac": self.sac.to_dict(),
            "layout": self.layout.to_dict(),
            "rule": self.rule.to_dict(),
            "eval_every": self.eval_every,
            "eval_episodes": self.eval_episodes,
            "output_dir": self.output_dir,
            "record_wall_clock": self.record_wall_clock,
            "max_bad_updates": self.max_bad_updates,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "sac" in d:
            d["sac"] = SacConfig.from_dict(d["sac"])
        if "layout" in d:
            d["layout"] = WorldLayout.from_dict(d["layout"])
        if "rule" in d:
            d["rule"] = BatteryRule.from_dict(d["rule"])
        return cls(**d)


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def dump_config(config, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
