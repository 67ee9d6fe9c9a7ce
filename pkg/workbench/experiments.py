"""
Experiment sweeps: plan and simulate a join under several algorithms and
reducer budgets (or capacities), one metrics row per (algorithm, value).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from joins.executor import ShuffleSimulator, ShuffleStats
from joins.hh_stats import HeavyHitterCatalog, HeavyHitterThreshold, detect_heavy_hitters
from joins.join_model import JoinSpec, TupleStore
from joins.mapper import HashFamily
from joins.planner import ALGORITHM_SHARES, ALGORITHM_SHARESSKEW, MODE_K, MODE_Q, JoinPlanner
from utils.config_manager import ConfigManager, get_config
from utils.error_handler import ConfigurationError, SpecValidationError
from utils.log_setup import setup_logger

ALGORITHM_NAIVE = "naive"
ALGORITHMS = (ALGORITHM_SHARES, ALGORITHM_SHARESSKEW, ALGORITHM_NAIVE)
COLUMNS = ["algorithm", "k", "q", "total_reducers", "predicted_cost", "measured_pairs", "max_load",
           "mean_load", "output_count"]


@dataclass
class ExperimentSweep:
    values: List[float]
    algorithms: Tuple[str, ...] = ALGORITHMS
    mode: str = MODE_K
    output_path: Optional[Path] = None

    def validate(self) -> "ExperimentSweep":
        if not self.values:
            raise ConfigurationError("A sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigurationError(f"Sweep values must be strictly increasing, got {self.values}")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigurationError(f"Unknown algorithm(s) {unknown}; choose from {list(ALGORITHMS)}")
        if self.mode not in (MODE_K, MODE_Q):
            raise ConfigurationError(f"Sweep mode must be '{MODE_K}' or '{MODE_Q}'")
        if self.mode == MODE_Q and ALGORITHM_NAIVE in self.algorithms:
            raise ConfigurationError("The naive baseline takes a reducer count; sweep it in k mode")
        return self


class ExperimentRunner:
    """Runs plans for each algorithm on one loaded dataset."""

    def __init__(self, spec: JoinSpec, store: TupleStore, config: Optional[ConfigManager] = None,
                 threshold: Optional[HeavyHitterThreshold] = None, hashes: Optional[HashFamily] = None,
                 compute_output: bool = False):
        self.spec = spec
        self.store = store
        self.config = config or get_config()
        self.threshold = threshold or HeavyHitterThreshold.from_settings(self.config.get_heavy_hitter_settings())
        self.hashes = hashes or HashFamily(self.config.get_hashing_settings().get("master_seed", 1729))
        self.compute_output = compute_output
        self.planner = JoinPlanner(self.config)
        self.simulator = ShuffleSimulator.from_config(spec, self.config)
        self.logger = setup_logger("ExperimentRunner")
        self._catalog: Optional[HeavyHitterCatalog] = None

    @property
    def catalog(self) -> HeavyHitterCatalog:
        if self._catalog is None:
            workers = self.config.get("heavy_hitters.workers", 1)
            self._catalog = detect_heavy_hitters(self.store, self.spec, self.threshold, workers)
        return self._catalog

    def _row(self, algorithm: str, k: Optional[int], q: Optional[float], reducers: int, predicted: float,
             stats: ShuffleStats) -> Dict[str, Any]:
        return {
            "algorithm": algorithm,
            "k": k,
            "q": q,
            "total_reducers": reducers,
            "predicted_cost": predicted,
            "measured_pairs": stats.total_pairs,
            "max_load": stats.max_load,
            "mean_load": stats.mean_load,
            "output_count": stats.output_count,
        }

    def run_algorithm(self, algorithm: str, value: float, mode: str = MODE_K) -> Dict[str, Any]:
        k = int(value) if mode == MODE_K else None
        q = float(value) if mode == MODE_Q else None

        if algorithm == ALGORITHM_NAIVE:
            heavy = self._naive_values()
            _, stats = self.simulator.naive_2way(self.store, heavy, k, self.hashes, self.compute_output)
            predicted = sum(r.predicted_cost for r in stats.residuals.values())
            return self._row(algorithm, k, q, stats.reducer_count, predicted, stats)

        catalog = self.catalog if algorithm == ALGORITHM_SHARESSKEW else HeavyHitterCatalog.empty()
        plan = self.planner.plan(self.spec, self.store, catalog, k=k, q=q, algorithm=algorithm)
        _, stats = self.simulator.run_job(self.store, plan, self.hashes, self.compute_output)
        return self._row(algorithm, k, q, plan.total_reducers, plan.predicted_cost, stats)

    def _naive_values(self) -> List[str]:
        if len(self.spec.relations) != 2:
            raise SpecValidationError("The naive baseline needs a 2-way join")
        left, right = self.spec.relations
        shared = self.spec.shared_attributes(left.name, right.name)
        if len(shared) != 1:
            raise SpecValidationError("The naive baseline needs exactly one join attribute")
        return list(self.catalog.values(shared[0]))

    def sweep(self, sweep: ExperimentSweep) -> pd.DataFrame:
        sweep.validate()
        rows = []
        for value in sweep.values:
            for algorithm in sweep.algorithms:
                row = self.run_algorithm(algorithm, value, sweep.mode)
                self.logger.info(
                    f"{algorithm} @ {sweep.mode}={value}: {row['measured_pairs']} pairs, max load {row['max_load']}"
                )
                rows.append(row)
        frame = pd.DataFrame(rows, columns=COLUMNS)
        if sweep.output_path is not None:
            path = Path(sweep.output_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False)
            self.logger.info(f"Sweep written to {path}")
        return frame

    def compare(self, k: int, algorithms: Sequence[str] = ALGORITHMS) -> pd.DataFrame:
        return self.sweep(ExperimentSweep(values=[int(k)], algorithms=tuple(algorithms)))


def sweep(spec: JoinSpec, store: TupleStore, experiment: ExperimentSweep,
          config: Optional[ConfigManager] = None,
          threshold: Optional[HeavyHitterThreshold] = None) -> pd.DataFrame:
    return ExperimentRunner(spec, store, config, threshold).sweep(experiment)
