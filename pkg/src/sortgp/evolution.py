"""Generational GP loop: tournament selection, subtree mutation, phase protocols.

Two protocols are supported.  *Two-phase* evolves under f1 until some program
works, keeps going under f1 for a short steady-state window, then switches to
f2 or f3 and counts generations again from zero.  *Single-metric* evolves under
f2 or f3 from random programs.

A generation count of 0 means a working program was already present in the
population the phase started with.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .fitness import METRICS, make_eval_set, score_population
from .program import DEFAULT_P_ABSENT, MAX_DEPTH, Program, mutate, random_population

log = logging.getLogger(__name__)

TWO_PHASE = "two-phase"
SINGLE_METRIC = "single-metric"
PROTOCOLS = (TWO_PHASE, SINGLE_METRIC)

LogFn = Callable[[dict], None]


@dataclass(frozen=True)
class EvolutionConfig:
    v: int
    population_size: int = 1000
    tournament_size: int = 7
    mutation_probability: float = 0.2
    steady_state_generations: int = 10
    second_metric: str = "f2"
    max_generations: int = 20000
    seed: int = 0
    p_absent: float = DEFAULT_P_ABSENT
    max_depth: int = MAX_DEPTH
    # working means score >= 1 - tolerance; exact by default
    tolerance: float = 0.0

    def __post_init__(self):
        if self.v < 1:
            raise ValueError("v must be at least 1")
        if not self.population_size >= self.tournament_size >= 1:
            raise ValueError("need population_size >= tournament_size >= 1")
        if not 0.0 <= self.mutation_probability <= 1.0:
            raise ValueError("mutation_probability must be in [0, 1]")
        if self.steady_state_generations < 0:
            raise ValueError("steady_state_generations must be >= 0")
        if self.second_metric not in ("f2", "f3", "none"):
            raise ValueError(f"unknown metric {self.second_metric!r}")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if not 1 <= self.max_depth <= MAX_DEPTH:
            raise ValueError(f"max_depth must be in 1..{MAX_DEPTH}")


@dataclass(frozen=True)
class EvolutionResult:
    gens_phase1: Optional[int] = None
    gens_phase2: Optional[int] = None
    steady_state_perfect_fraction: Optional[float] = None
    capped: bool = False
    winner_phase1: Optional[str] = None
    winner_phase2: Optional[str] = None


@dataclass
class RunSummary:
    protocol: str
    evolutions: int
    G1: Optional[float] = None
    G2: Optional[float] = None
    G2_prime: Optional[float] = None
    capped: int = 0
    results: list[EvolutionResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def median(values: Sequence[float]) -> Optional[float]:
    """Median with the mean-of-middle-pair convention; None for no values."""
    values = [x for x in values if x is not None]
    return float(statistics.median(values)) if values else None


def tournament_indices(fitness: np.ndarray, count: int, tournament_size: int,
                       rng: np.random.Generator, return_candidates: bool = False):
    """Run ``count`` independent tournaments over ``fitness``.

    Entrants are drawn uniformly with replacement.  The winner has the highest
    fitness among its entrants, ties broken uniformly at random.
    """
    fitness = np.asarray(fitness, dtype=float)
    cand = rng.integers(0, len(fitness), size=(count, tournament_size))
    f = fitness[cand]
    top = f.max(axis=1, keepdims=True)
    key = np.where(f == top, rng.random(cand.shape), -1.0)
    winners = cand[np.arange(count), key.argmax(axis=1)]
    if return_candidates:
        return winners, cand
    return winners


def tournament_select(population: Sequence[Program], fitness: np.ndarray,
                      tournament_size: int, rng: np.random.Generator) -> Program:
    return population[int(tournament_indices(fitness, 1, tournament_size, rng)[0])]


def breed(population: Sequence[Program], fitness: np.ndarray, config: EvolutionConfig,
          rng: np.random.Generator) -> tuple[list[Program], np.ndarray, np.ndarray]:
    """Build the next generation; returns (offspring, parent indices, mutated mask).

    No elitism: every slot is filled by a tournament winner, mutated with
    probability ``config.mutation_probability`` and otherwise copied.
    """
    n = config.population_size
    parents = tournament_indices(fitness, n, config.tournament_size, rng)
    mutated = rng.random(n) < config.mutation_probability
    offspring = []
    for i, mutate_it in zip(parents, mutated):
        parent = population[i]
        if mutate_it:
            parent = mutate(parent, config.v, rng, config.max_depth, config.p_absent)
        offspring.append(parent)
    return offspring, parents, mutated


def next_generation(population: Sequence[Program], eval_set, metric: str,
                    config: EvolutionConfig, rng: np.random.Generator) -> list[Program]:
    if len(population) != config.population_size:
        raise ValueError("population size does not match the configuration")
    scores = score_population(population, eval_set, config.v, metric)
    return breed(population, scores, config, rng)[0]


class _Phase:
    """Runs generations under one metric and keeps the generation log."""

    def __init__(self, config: EvolutionConfig, rng: np.random.Generator,
                 on_record: Optional[LogFn], evolution: int):
        self.config = config
        self.rng = rng
        self.on_record = on_record
        self.evolution = evolution

    def score(self, population, metric: str, phase: str, generation: int) -> np.ndarray:
        scores = score_population(population, make_eval_set(self.rng), self.config.v, metric)
        if self.on_record is not None:
            working = scores >= 1.0 - self.config.tolerance
            self.on_record({
                "evolution": self.evolution,
                "phase": phase,
                "metric": metric,
                "generation": generation,
                "best": float(scores.max()),
                "perfect_fraction": float(working.mean()),
            })
        return scores

    def until_working(self, population, metric: str, phase: str):
        """Evolve until a working program appears or the cap is hit.

        Returns (generations, population, scores, capped).
        """
        cfg = self.config
        gen = 0
        while True:
            scores = self.score(population, metric, phase, gen)
            if scores.max() >= 1.0 - cfg.tolerance:
                return gen, population, scores, False
            if gen >= cfg.max_generations:
                return gen, population, scores, True
            population = breed(population, scores, cfg, self.rng)[0]
            gen += 1

    def pick_working(self, population, scores) -> str:
        idx = np.flatnonzero(scores >= 1.0 - self.config.tolerance)
        return str(population[int(self.rng.choice(idx))])


def _initial(config: EvolutionConfig, rng, initial_population):
    if initial_population is not None:
        if len(initial_population) != config.population_size:
            raise ValueError("initial population size does not match the configuration")
        return list(initial_population)
    return random_population(config.population_size, config.v, rng,
                             config.max_depth, config.p_absent)


def run_evolution(config: EvolutionConfig, rng: Optional[np.random.Generator] = None,
                  initial_population: Optional[Sequence[Program]] = None,
                  on_record: Optional[LogFn] = None, evolution: int = 0,
                  phase1_only: bool = False) -> EvolutionResult:
    """One two-phase evolution: f1 to first success, steady window, then f2/f3."""
    if config.second_metric == "none" and not phase1_only:
        raise ValueError("two-phase evolution needs second_metric f2 or f3")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    runner = _Phase(config, rng, on_record, evolution)
    population = _initial(config, rng, initial_population)

    g1, population, scores, capped = runner.until_working(population, "f1", "phase1")
    if capped:
        return EvolutionResult(gens_phase1=g1, capped=True)
    winner1 = runner.pick_working(population, scores)
    if phase1_only:
        return EvolutionResult(gens_phase1=g1, winner_phase1=winner1)

    for k in range(config.steady_state_generations):
        population = breed(population, scores, config, rng)[0]
        scores = runner.score(population, "f1", "steady", k + 1)
    fraction = float(np.mean(scores >= 1.0 - config.tolerance))

    g2, population, scores, capped = runner.until_working(
        population, config.second_metric, "phase2")
    winner2 = None if capped else runner.pick_working(population, scores)
    return EvolutionResult(g1, g2, fraction, capped, winner1, winner2)


def run_single_metric(config: EvolutionConfig, rng: Optional[np.random.Generator] = None,
                      initial_population: Optional[Sequence[Program]] = None,
                      on_record: Optional[LogFn] = None, evolution: int = 0) -> EvolutionResult:
    """Evolve under f2 or f3 alone from random programs."""
    if config.second_metric not in ("f2", "f3"):
        raise ValueError("single-metric evolution needs second_metric f2 or f3")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    runner = _Phase(config, rng, on_record, evolution)
    population = _initial(config, rng, initial_population)
    g, population, scores, capped = runner.until_working(
        population, config.second_metric, "single")
    winner = None if capped else runner.pick_working(population, scores)
    return EvolutionResult(gens_phase2=g, capped=capped, winner_phase2=winner)


def evolution_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for evolution ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _one(args) -> EvolutionResult:
    config, protocol, index, verbose = args
    rng = evolution_rng(config.seed, index)
    on_record = _log_record if verbose else None
    if protocol == TWO_PHASE:
        return run_evolution(config, rng, on_record=on_record, evolution=index)
    if protocol == "phase1":
        return run_evolution(config, rng, on_record=on_record, evolution=index,
                             phase1_only=True)
    return run_single_metric(config, rng, on_record=on_record, evolution=index)


def _log_record(record: dict) -> None:
    log.info(json.dumps(record))


def run_experiment(config: EvolutionConfig, evolutions: int = 100,
                   protocol: str = TWO_PHASE, workers: int = 1,
                   verbose: bool = False) -> RunSummary:
    """Run independent evolutions and summarise them by their medians.

    Evolution ``i`` draws from :func:`evolution_rng` (seed, i), so the summary
    does not depend on ``workers``.  Capped evolutions are counted at the cap.
    """
    if evolutions < 1:
        raise ValueError("need at least one evolution")
    if protocol not in PROTOCOLS + ("phase1",):
        raise ValueError(f"unknown protocol {protocol!r}")
    jobs = [(config, protocol, i, verbose) for i in range(evolutions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(job) for job in jobs]

    summary = RunSummary(protocol, evolutions, results=results,
                         capped=sum(r.capped for r in results))
    if protocol == SINGLE_METRIC:
        summary.G2_prime = median([r.gens_phase2 for r in results])
    else:
        summary.G1 = median([r.gens_phase1 for r in results])
        summary.G2 = median([r.gens_phase2 for r in results])
    return summary


def with_seed(config: EvolutionConfig, seed: int) -> EvolutionConfig:
    return replace(config, seed=seed)
