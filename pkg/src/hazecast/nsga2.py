"""NSGA-II over mixed real/integer/categorical genomes, plus a random-search comparator.

Both objectives are minimised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleBounds, NonFiniteObjective, ValidationError


@dataclass(frozen=True)
class Real:
    lo: float
    hi: float


@dataclass(frozen=True)
class Int:
    lo: int
    hi: int


@dataclass(frozen=True)
class Choice:
    options: tuple


class GenomeSpace:
    """Ordered gene declarations; genomes are tuples in declaration order."""

    def __init__(self, genes: dict):
        self.names = list(genes)
        self.genes = [genes[n] for n in self.names]
        for name, g in genes.items():
            if isinstance(g, (Real, Int)) and not g.lo <= g.hi:
                raise InfeasibleBounds(f"gene {name!r}: lo > hi")
            if isinstance(g, Choice) and not g.options:
                raise InfeasibleBounds(f"gene {name!r}: no options")

    def __len__(self):
        return len(self.genes)

    def as_dict(self, genome) -> dict:
        return dict(zip(self.names, genome))

    def from_dict(self, values: dict) -> tuple:
        return tuple(values[n] for n in self.names)

    def sample(self, rng) -> tuple:
        out = []
        for g in self.genes:
            if isinstance(g, Real):
                out.append(float(rng.uniform(g.lo, g.hi)))
            elif isinstance(g, Int):
                out.append(int(rng.integers(g.lo, g.hi + 1)))
            else:
                out.append(g.options[int(rng.integers(len(g.options)))])
        return tuple(out)

    def contains(self, genome) -> bool:
        for g, v in zip(self.genes, genome):
            if isinstance(g, (Real, Int)) and not g.lo <= v <= g.hi:
                return False
            if isinstance(g, Choice) and v not in g.options:
                return False
        return True


@dataclass
class Individual:
    genome: tuple
    objectives: tuple
    rank: int = 0
    crowding: float = 0.0


@dataclass(frozen=True)
class SearchConfig:
    population: int = 16
    generations: int = 10
    crossover_prob: float = 0.9
    mutation_prob: float = 0.2
    seed: int = 0
    eta_c: float = 15.0  # SBX distribution index
    sigma: float = 0.1  # Gaussian mutation scale as a fraction of the gene range

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValidationError("population must be even and >= 4")
        if not (0 <= self.crossover_prob <= 1 and 0 <= self.mutation_prob <= 1):
            raise ValidationError("probabilities must lie in [0, 1]")
        if self.generations < 0:
            raise ValidationError("generations must be >= 0")


@dataclass
class SearchResult:
    population: list
    front: list
    history: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)  # every distinct genome evaluated, in first-seen order


def dominates(a, b) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def _check_finite(objs):
    for o in objs:
        if not all(math.isfinite(v) for v in o):
            raise NonFiniteObjective(f"objective vector {o} is not finite")


def fast_nondominated_sort(objs: Sequence) -> list:
    """Fronts as lists of indices into ``objs``; front 0 is non-dominated."""
    objs = [tuple(map(float, o)) for o in objs]
    _check_finite(objs)
    n = len(objs)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(objs[p], objs[q]):
                dominated_by[p].append(q)
                count[q] += 1
            elif dominates(objs[q], objs[p]):
                dominated_by[q].append(p)
                count[p] += 1
    fronts = [[p for p in range(n) if count[p] == 0]]
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                count[q] -= 1
                if count[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(sorted(nxt))
    return fronts[:-1]


def crowding_distance(front: Sequence) -> list:
    """Per-point sum over objectives of the normalised gap between its neighbours.

    The first and last point along each objective get +inf. Sorting is
    lexicographic on the full objective vector, so the result does not depend
    on the order of distinct points.
    """
    F = np.asarray(front, dtype=np.float64)
    n = len(F)
    if n == 0:
        return []
    if n <= 2:
        return [math.inf] * n
    dist = np.zeros(n)
    for m in range(F.shape[1]):
        # primary key objective m, remaining objectives break ties
        order = np.lexsort([F[:, j] for j in reversed(range(F.shape[1])) if j != m] + [F[:, m]])
        fmin, fmax = F[order[0], m], F[order[-1], m]
        span = fmax - fmin
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        if span == 0:
            continue
        for r in range(1, n - 1):
            i = order[r]
            if math.isfinite(dist[i]):
                dist[i] += (F[order[r + 1], m] - F[order[r - 1], m]) / span
    return dist.tolist()


def hypervolume_2d(points, ref) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (minimisation)."""
    pts = sorted((float(a), float(b)) for a, b in points if a < ref[0] and b < ref[1])
    area, best_b = 0.0, ref[1]
    for a, b in pts:
        if b < best_b:
            area += (ref[0] - a) * (best_b - b)
            best_b = b
    return area


def _assign_rank_crowding(pop: list) -> list:
    fronts = fast_nondominated_sort([ind.objectives for ind in pop])
    for r, front in enumerate(fronts, start=1):
        cd = crowding_distance([pop[i].objectives for i in front])
        for i, c in zip(front, cd):
            pop[i].rank = r
            pop[i].crowding = c
    return fronts


def _better(a: Individual, b: Individual) -> bool:
    if a.rank != b.rank:
        return a.rank < b.rank
    return a.crowding > b.crowding


def _tournament(pop, rng) -> Individual:
    i, j = rng.integers(len(pop), size=2)
    return pop[j] if _better(pop[j], pop[i]) else pop[i]


def _sbx(x1, x2, lo, hi, eta, rng):
    if abs(x1 - x2) < 1e-14:
        return x1, x2
    u = rng.random()
    beta = (2 * u) ** (1 / (eta + 1)) if u <= 0.5 else (1 / (2 * (1 - u))) ** (1 / (eta + 1))
    c1 = 0.5 * ((1 + beta) * x1 + (1 - beta) * x2)
    c2 = 0.5 * ((1 - beta) * x1 + (1 + beta) * x2)
    return float(np.clip(c1, lo, hi)), float(np.clip(c2, lo, hi))


def _crossover(space, p1, p2, cfg, rng):
    c1, c2 = list(p1), list(p2)
    if rng.random() < cfg.crossover_prob:
        for i, g in enumerate(space.genes):
            if rng.random() >= 0.5:
                continue
            if isinstance(g, Real):
                c1[i], c2[i] = _sbx(p1[i], p2[i], g.lo, g.hi, cfg.eta_c, rng)
            else:
                c1[i], c2[i] = p2[i], p1[i]
    return tuple(c1), tuple(c2)


def _mutate(space, genome, cfg, rng):
    out = list(genome)
    for i, g in enumerate(space.genes):
        if rng.random() >= cfg.mutation_prob:
            continue
        if isinstance(g, Real):
            out[i] = float(np.clip(out[i] + rng.normal(0.0, cfg.sigma * (g.hi - g.lo)), g.lo, g.hi))
        elif isinstance(g, Int):
            out[i] = int(rng.integers(g.lo, g.hi + 1))
        else:
            out[i] = g.options[int(rng.integers(len(g.options)))]
    return tuple(out)


class _CachedEval:
    def __init__(self, fn, space, repair):
        self.fn, self.space, self.repair, self.cache = fn, space, repair, {}

    def fix(self, genome):
        if self.repair is None:
            return genome
        return self.space.from_dict(self.repair(self.space.as_dict(genome)))

    def __call__(self, genome) -> Individual:
        if genome not in self.cache:
            objs = tuple(float(v) for v in self.fn(self.space.as_dict(genome)))
            _check_finite([objs])
            self.cache[genome] = objs
        return Individual(genome, self.cache[genome])


def evolve(evaluate: Callable, cfg: SearchConfig, space: GenomeSpace, repair: Callable | None = None,
           on_generation: Callable | None = None) -> SearchResult:
    """Elitist NSGA-II.

    ``evaluate`` maps a genome dict to an objective tuple. ``repair`` maps a
    genome dict to a feasible genome dict. ``on_generation(gen, objectives,
    fronts)`` sees every sorted population (the initial one and each
    parents+offspring union).
    """
    rng = np.random.default_rng(cfg.seed)
    ev = _CachedEval(evaluate, space, repair)
    pop = [ev(ev.fix(space.sample(rng))) for _ in range(cfg.population)]
    fronts = _assign_rank_crowding(pop)
    history = [{"generation": 0, "objectives": [p.objectives for p in pop], "fronts": fronts}]
    if on_generation:
        on_generation(0, [p.objectives for p in pop], fronts)

    for gen in range(1, cfg.generations + 1):
        children = []
        while len(children) < cfg.population:
            a, b = _tournament(pop, rng), _tournament(pop, rng)
            c1, c2 = _crossover(space, a.genome, b.genome, cfg, rng)
            for c in (c1, c2):
                children.append(ev(ev.fix(_mutate(space, c, cfg, rng))))
        # duplicates would share crowding and flood the population; they go last
        union, seen, dupes = [], set(), []
        for ind in pop + children[: cfg.population]:
            (dupes if ind.genome in seen else union).append(ind)
            seen.add(ind.genome)
        if len(union) < cfg.population:
            union += dupes[: cfg.population - len(union)]
        fronts = _assign_rank_crowding(union)
        history.append({"generation": gen, "objectives": [p.objectives for p in union], "fronts": fronts})
        if on_generation:
            on_generation(gen, [p.objectives for p in union], fronts)
        survivors = []
        for front in fronts:
            if len(survivors) + len(front) <= cfg.population:
                survivors.extend(front)
            else:
                room = cfg.population - len(survivors)
                ranked = sorted(front, key=lambda i: (-union[i].crowding, i))
                survivors.extend(ranked[:room])
                break
        pop = [Individual(union[i].genome, union[i].objectives) for i in survivors]
        _assign_rank_crowding(pop)

    front = [p for p in pop if p.rank == 1]
    evaluations = [Individual(g, o) for g, o in ev.cache.items()]
    return SearchResult(pop, front, history, evaluations)


def random_search(evaluate: Callable, n_trials: int, space: GenomeSpace, seed: int = 0,
                  repair: Callable | None = None) -> tuple:
    """Uniform sampling; returns (best-by-first-objective Individual, all trials)."""
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    ev = _CachedEval(evaluate, space, repair)
    trials = [ev(ev.fix(space.sample(rng))) for _ in range(n_trials)]
    _assign_rank_crowding(trials)
    best = min(range(n_trials), key=lambda i: (trials[i].objectives[0], i))
    return trials[best], trials
