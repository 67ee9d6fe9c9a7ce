"""
Synthetic relation generator.

Values are decimal-string tokens drawn uniformly or from a bounded Zipf law;
planted heavy hitters appear exactly ceil(f * n) times. Every column draws from
its own generator seeded by (seed, relation index, attribute index), so output
is reproducible byte for byte.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from joins.join_model import JoinSpec, RelationSchema
from utils.error_handler import ConfigurationError
from utils.log_setup import setup_logger
from workbench.tuple_io import relation_path, write_relation

UNIFORM = "uniform"
ZIPF = "zipf"
PLANTED = "planted"


@dataclass
class PlantedValue:
    value: str
    fraction: float


@dataclass
class AttributeDistribution:
    kind: str = UNIFORM
    domain_size: int = 1000
    zipf_s: float = 0.0
    planted: List[PlantedValue] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttributeDistribution":
        return cls(
            kind=str(data.get("kind", UNIFORM)),
            domain_size=int(data.get("domain_size", 1000)),
            zipf_s=float(data.get("zipf_s", 0.0)),
            planted=[PlantedValue(str(p["value"]), float(p["fraction"])) for p in data.get("planted", [])],
        )


@dataclass
class RelationGeneratorConfig:
    name: str
    tuple_count: int
    attributes: Dict[str, AttributeDistribution] = field(default_factory=dict)

    def distribution(self, attribute: str) -> AttributeDistribution:
        return self.attributes.get(attribute, AttributeDistribution())


@dataclass
class GeneratorConfig:
    relations: List[RelationGeneratorConfig]
    seed: int = 7

    def validate(self) -> "GeneratorConfig":
        for relation in self.relations:
            if relation.tuple_count < 0:
                raise ConfigurationError(f"Negative tuple count for {relation.name}")
            for attribute, dist in relation.attributes.items():
                if dist.kind not in (UNIFORM, ZIPF, PLANTED):
                    raise ConfigurationError(f"Unknown distribution '{dist.kind}' for {relation.name}.{attribute}")
                if dist.domain_size < 1:
                    raise ConfigurationError(f"Domain of {relation.name}.{attribute} must be non-empty")
                if dist.zipf_s < 0:
                    raise ConfigurationError(f"Zipf exponent of {relation.name}.{attribute} must be >= 0")
                planted_total = 0
                for planted in dist.planted:
                    if not 0 < planted.fraction <= 1:
                        raise ConfigurationError(
                            f"Planted fraction {planted.fraction} of {relation.name}.{attribute} outside (0, 1]"
                        )
                    planted_total += math.ceil(planted.fraction * relation.tuple_count)
                if planted_total > relation.tuple_count:
                    raise ConfigurationError(
                        f"Planted values of {relation.name}.{attribute} need {planted_total} tuples, "
                        f"only {relation.tuple_count} generated"
                    )
        return self

    def relation(self, name: str) -> Optional[RelationGeneratorConfig]:
        return next((r for r in self.relations if r.name == name), None)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], default_seed: int = 7) -> "GeneratorConfig":
        """Parse a generator config; ``default_seed`` applies when the file names no seed."""
        try:
            relations = [
                RelationGeneratorConfig(
                    name=str(item["name"]),
                    tuple_count=int(item["tuples"]),
                    attributes={
                        str(a): AttributeDistribution.from_dict(d) for a, d in item.get("attributes", {}).items()
                    },
                )
                for item in data["relations"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Malformed generator config: {e}") from e
        return cls(relations=relations, seed=int(data.get("seed", default_seed))).validate()

    @classmethod
    def load(cls, path: Path, default_seed: int = 7) -> "GeneratorConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f), default_seed)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read generator config {path}: {e}") from e


class DataGenerator:
    """Writes one TSV file per relation of a join spec."""

    def __init__(self, config: GeneratorConfig):
        self.config = config.validate()
        self.logger = setup_logger("DataGenerator")

    def _column(self, rng: np.random.Generator, dist: AttributeDistribution, count: int) -> np.ndarray:
        planted_values = [p.value for p in dist.planted]
        planted_counts = [math.ceil(p.fraction * count) for p in dist.planted]
        remaining = count - sum(planted_counts)

        tokens = np.array([str(i) for i in range(dist.domain_size) if str(i) not in planted_values], dtype=object)
        if remaining and len(tokens) == 0:
            raise ConfigurationError("Domain is exhausted by planted values")
        if dist.kind == ZIPF and dist.zipf_s > 0:
            weights = 1.0 / np.arange(1, len(tokens) + 1, dtype=float) ** dist.zipf_s
            base = rng.choice(tokens, size=remaining, p=weights / weights.sum())
        else:
            base = rng.choice(tokens, size=remaining) if remaining else np.array([], dtype=object)

        column = np.concatenate([np.repeat(np.array(planted_values, dtype=object), planted_counts), base.astype(object)])
        return rng.permutation(column)

    def generate_frame(self, relation_index: int, schema: RelationSchema) -> pd.DataFrame:
        settings = self.config.relation(schema.name)
        if settings is None:
            raise ConfigurationError(f"No generator settings for relation {schema.name}")
        columns = {}
        for attribute_index, attribute in enumerate(schema.attributes):
            rng = np.random.default_rng([self.config.seed, relation_index, attribute_index])
            columns[attribute] = self._column(rng, settings.distribution(attribute), settings.tuple_count)
        return pd.DataFrame(columns, columns=list(schema.attributes))

    def generate(self, spec: JoinSpec, out_dir: Path) -> Dict[str, Path]:
        paths: Dict[str, Path] = {}
        for index, schema in enumerate(spec.relations):
            settings = self.config.relation(schema.name)
            if settings is not None and schema.declared_size is not None and schema.declared_size != settings.tuple_count:
                raise ConfigurationError(
                    f"Spec declares {schema.declared_size} tuples for {schema.name}, generator asks for "
                    f"{settings.tuple_count}"
                )
            frame = self.generate_frame(index, schema)
            paths[schema.name] = write_relation(relation_path(out_dir, schema.name), schema.name,
                                                schema.attributes, frame)
            self.logger.info(f"Generated {len(frame)} tuple(s) for {schema.name} -> {paths[schema.name]}")
        return paths


def generate(config: GeneratorConfig, spec: JoinSpec, out_dir: Path) -> Dict[str, Path]:
    return DataGenerator(config).generate(spec, out_dir)
