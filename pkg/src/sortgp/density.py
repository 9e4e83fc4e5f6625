"""Monte-Carlo density of working programs among random programs.

Random programs are drawn with a prescribed node-count (length) histogram:
pick a length from the histogram, then grow random trees until one has
exactly that many nodes.  The histogram is taken from programs that
evolution actually finds, so that densities describe the same kind of
programs the generation counts do.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy.stats import binomtest

from . import _kernels as K
from .evolution import EvolutionConfig, evolution_rng, run_evolution
from .fitness import EVAL_SIZES, make_eval_set, score_population
from .program import MAX_DEPTH, Program

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10_000
DEFAULT_BATCH = 20_000

Predicate = Union[str, Callable[[Program], bool]]
_PREDICATES = {"f1": K.PRED_F1, "f2": K.PRED_F2}


class DensityBudgetExceeded(RuntimeError):
    """Sampling stopped before reaching the hit target; carries partial counts."""

    def __init__(self, estimate: "DensityEstimate"):
        super().__init__(
            f"{estimate.predicate_id}: {estimate.hits} hits in {estimate.samples} "
            f"samples, below the target")
        self.estimate = estimate


class LengthCollectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LengthDistribution:
    support: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.weights) or not self.support:
            raise ValueError("support and weights must be non-empty and equally long")
        if any(not 1 <= s <= K.MAX_NODES for s in self.support):
            raise ValueError(f"node counts must lie in 1..{K.MAX_NODES}")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")

    @classmethod
    def from_counts(cls, counts: Union[Counter, dict[int, float]]) -> "LengthDistribution":
        items = sorted((int(k), float(w)) for k, w in counts.items() if w > 0)
        if not items:
            raise ValueError("empty histogram")
        total = sum(w for _, w in items)
        return cls(tuple(k for k, _ in items), tuple(w / total for _, w in items))

    @classmethod
    def of_programs(cls, programs: Iterable[Program]) -> "LengthDistribution":
        return cls.from_counts(Counter(p.node_count for p in programs))

    @classmethod
    def point_mass(cls, length: int) -> "LengthDistribution":
        return cls((length,), (1.0,))

    def blend(self, other: "LengthDistribution", weight: float = 0.5) -> "LengthDistribution":
        """Mixture ``(1 - weight) * self + weight * other``."""
        mix: Counter = Counter()
        for k, w in zip(self.support, self.weights):
            mix[k] += (1 - weight) * w
        for k, w in zip(other.support, other.weights):
            mix[k] += weight * w
        return LengthDistribution.from_counts(mix)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        return np.array(self.support, dtype=np.int64), cdf

    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))

    def to_dict(self) -> dict[str, float]:
        return {str(k): w for k, w in zip(self.support, self.weights)}


@dataclass(frozen=True)
class DensityEstimate:
    predicate_id: str
    hits: int
    samples: int
    density: float
    ci_low: float
    ci_high: float
    # f1-working programs seen, for the conditional estimate
    f1_hits: Optional[int] = None

    @property
    def confidence_interval(self) -> tuple[float, float]:
        return self.ci_low, self.ci_high


def wilson_interval(hits: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(hits, trials).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _estimate(predicate_id: str, hits: int, trials: int, f1_hits=None) -> DensityEstimate:
    lo, hi = wilson_interval(hits, trials)
    return DensityEstimate(predicate_id, hits, trials, hits / trials if trials else 0.0,
                           lo, hi, f1_hits)


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**32))


def sample_conditioned_batch(dist: LengthDistribution, v: int, count: int,
                             rng: np.random.Generator, p_absent: float = 0.25,
                             max_depth: int = MAX_DEPTH) -> list[Program]:
    support, cdf = dist.as_arrays()
    code, offsets = K.conditioned_batch(_seed(rng), count, support, cdf, max_depth, v,
                                        p_absent, MAX_REJECTIONS)
    return [Program(code[offsets[k]:offsets[k + 1]]) for k in range(count)]


def sample_conditioned(dist: LengthDistribution, v: int, rng: np.random.Generator,
                       p_absent: float = 0.25, max_depth: int = MAX_DEPTH) -> Program:
    """Random program whose node count is drawn from ``dist``.

    A target count that fails to come up in 10 000 tries is redrawn.
    """
    return sample_conditioned_batch(dist, v, 1, rng, p_absent, max_depth)[0]


def estimate_density(predicate: Predicate, dist: LengthDistribution, v: int,
                     min_hits: int = 100, rng: Optional[np.random.Generator] = None,
                     batch_size: int = DEFAULT_BATCH, max_samples: Optional[int] = None,
                     p_absent: float = 0.25) -> DensityEstimate:
    """Sample until at least ``min_hits`` programs satisfy ``predicate``.

    ``predicate`` is ``"f1"`` or ``"f2"`` (working under that fitness on a
    fresh set of evaluation lists per program) or any callable on programs.
    Stopping is checked between batches, so the result depends only on the
    seed and ``batch_size``.
    """
    if min_hits < 1:
        raise ValueError("min_hits must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    if callable(predicate):
        name = getattr(predicate, "__name__", "custom")
        hits = samples = 0
        while hits < min_hits:
            if max_samples is not None and samples >= max_samples:
                raise DensityBudgetExceeded(_estimate(name, hits, samples))
            batch = sample_conditioned_batch(dist, v, batch_size, rng, p_absent)
            hits += sum(bool(predicate(p)) for p in batch)
            samples += batch_size
        return _estimate(name, hits, samples)

    if predicate not in _PREDICATES:
        raise ValueError(f"unknown predicate {predicate!r}")
    hits, samples, _ = _sample(dist, v, _PREDICATES[predicate], min_hits, rng,
                               batch_size, max_samples, p_absent, predicate)
    return _estimate(predicate, hits, samples)


def estimate_conditional_density(dist: LengthDistribution, v: int, min_hits: int = 100,
                                 rng: Optional[np.random.Generator] = None,
                                 batch_size: int = DEFAULT_BATCH,
                                 max_samples: Optional[int] = None,
                                 p_absent: float = 0.25) -> DensityEstimate:
    """Density of f2-working programs among f1-working ones.

    Stops once ``min_hits`` f2-working programs have been seen; the ratio is
    taken over the f1-working programs found along the way.
    """
    if min_hits < 1:
        raise ValueError("min_hits must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    f2_hits, samples, f1_hits = _sample(dist, v, K.PRED_CONDITIONAL, min_hits, rng,
                                        batch_size, max_samples, p_absent, "f2|f1")
    return _estimate("f2|f1", f2_hits, f1_hits, f1_hits)


def _sample(dist, v, mode, min_hits, rng, batch_size, max_samples, p_absent, name):
    support, cdf = dist.as_arrays()
    sizes = np.array(EVAL_SIZES, dtype=np.int64)
    hits = f1_total = samples = 0
    while hits < min_hits:
        if max_samples is not None and samples >= max_samples:
            if mode == K.PRED_CONDITIONAL:
                raise DensityBudgetExceeded(_estimate(name, hits, f1_total, f1_total))
            raise DensityBudgetExceeded(_estimate(name, hits, samples))
        f1, f2 = K.density_batch(_seed(rng), batch_size, support, cdf, MAX_DEPTH, v,
                                 p_absent, MAX_REJECTIONS, mode, sizes)
        samples += batch_size
        f1_total += f1
        hits += f1 if mode == K.PRED_F1 else f2
        log.debug("%s v=%d: %d hits / %d samples", name, v, hits, samples)
    return hits, samples, f1_total


def working_length_distribution(config: EvolutionConfig, n_working: int = 30,
                                rng: Optional[np.random.Generator] = None,
                                passes: int = 1, batch_size: int = DEFAULT_BATCH,
                                max_samples: Optional[int] = None) -> LengthDistribution:
    """Length histogram of working programs, made roughly self-consistent.

    First the node counts of the first working program of ``n_working``
    independent f1 evolutions are collected; capped evolutions are skipped,
    up to ``2 * n_working`` attempts.  Each refinement pass then draws
    random programs with the current histogram, collects ``n_working`` of them
    that work, and averages the two histograms.
    """
    if n_working < 30:
        raise ValueError("n_working must be at least 30")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    base = int(rng.integers(0, 2**63))
    lengths = []
    attempts = 2 * n_working
    for i in range(attempts):
        if len(lengths) == n_working:
            break
        result = run_evolution(config, evolution_rng(base, i), phase1_only=True)
        if result.capped:
            log.info("length collection: evolution %d capped, skipped", i)
            continue
        lengths.append(Program.parse(result.winner_phase1).node_count)
    if len(lengths) < n_working:
        raise LengthCollectionError(
            f"only {len(lengths)} of {attempts} evolutions found a working program "
            f"within {config.max_generations} generations")
    dist = LengthDistribution.from_counts(Counter(lengths))

    for _ in range(passes):
        found = _collect_working(dist, config, n_working, rng, batch_size, max_samples)
        dist = dist.blend(LengthDistribution.of_programs(found))
    return dist


def _collect_working(dist, config, n_working, rng, batch_size, max_samples):
    # one shared EvalSet per batch here; only the lengths are kept
    found: list[Program] = []
    samples = 0
    while len(found) < n_working:
        if max_samples is not None and samples >= max_samples:
            raise LengthCollectionError(
                f"only {len(found)} working programs in {samples} samples")
        batch = sample_conditioned_batch(dist, config.v, batch_size, rng, config.p_absent)
        samples += batch_size
        scores = score_population(batch, make_eval_set(rng), config.v, "f1")
        found.extend(p for p, s in zip(batch, scores) if s >= 1.0 - config.tolerance)
    return found[:n_working]
