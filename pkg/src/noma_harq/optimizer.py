"""Genetic-algorithm search for power splitting ratios.

Two problem shapes are covered: the power-constrained sweep (minimize the
worst per-user PER at each total received power, tracing the Pareto
front) and the reliability-constrained search for the smallest
blocklength whose optimized worst PER meets a target.

Chromosomes are unnormalized positive reals projected onto the simplex
(x / sum(x)) at evaluation time, so crossover and mutation never leave
the feasible set.  Everything is driven by one seeded generator, so a
given seed reproduces the run bit for bit.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InfeasibleError
from .fbl import CodeParams
from .markov import max_user_per

# floor for chromosome genes; keeps projected ratios strictly positive
GENE_FLOOR = 1e-6


@dataclass(frozen=True)
class GaParams:
    """Genetic algorithm hyperparameters.

    The source analysis gives none, so these defaults are tuned for the
    small simplex problems at hand and can be overridden throughout.
    """

    population_size: int = 60
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.05
    elitism_count: int = 2
    seed: int = 12345

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be at least 4")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must be smaller than the population")


@dataclass(frozen=True)
class ParetoPoint:
    """One point of the power/reliability trade-off front."""

    max_per: float
    p0_db: float
    alphas: Tuple[float, ...]


def _project(genes: np.ndarray) -> np.ndarray:
    genes = np.maximum(genes, GENE_FLOOR)
    return genes / genes.sum()


def ga_minimize(
    objective: Callable[[np.ndarray], float],
    n_vars: int,
    params: GaParams,
    initial: Optional[Sequence[Sequence[float]]] = None,
    trace: Optional[Callable[[int, float], None]] = None,
) -> Tuple[np.ndarray, float]:
    """Minimize objective(alphas) over the n_vars-simplex.

    The objective receives a normalized ratio vector (positive, summing
    to 1).  Non-finite objective values rank as worst.  Optional initial
    vectors are injected into the starting population (warm start).
    trace, when given, receives (generation, best value so far) after
    every generation.

    Returns (best ratio vector, best objective value).
    """
    if n_vars < 1:
        raise ValueError("n_vars must be at least 1")
    if n_vars == 1:
        alpha = np.array([1.0])
        return alpha, float(objective(alpha))

    rng = np.random.default_rng(params.seed)
    pop = rng.uniform(0.1, 1.0, size=(params.population_size, n_vars))
    if initial is not None:
        seeds = np.atleast_2d(np.asarray(list(initial), dtype=float))
        take = min(len(seeds), params.population_size)
        pop[:take] = np.maximum(seeds[:take], GENE_FLOOR)

    def evaluate(genes: np.ndarray) -> float:
        val = objective(_project(genes))
        return float(val) if math.isfinite(val) else math.inf

    fitness = np.array([evaluate(ind) for ind in pop])
    best_idx = int(fitness.argmin())
    best_genes = pop[best_idx].copy()
    best_val = fitness[best_idx]

    pop_size = params.population_size
    for gen in range(params.generations):
        order = np.argsort(fitness, kind="stable")
        elite = pop[order[: params.elitism_count]].copy()

        # binary tournament selection
        draws = rng.integers(0, pop_size, size=(pop_size, 2))
        winners = np.where(
            fitness[draws[:, 0]] <= fitness[draws[:, 1]], draws[:, 0], draws[:, 1]
        )
        parents = pop[winners]

        # arithmetic crossover on consecutive pairs
        children = parents.copy()
        for a in range(0, pop_size - 1, 2):
            if rng.random() < params.crossover_rate:
                u = rng.random()
                pa, pb = parents[a], parents[a + 1]
                children[a] = u * pa + (1.0 - u) * pb
                children[a + 1] = u * pb + (1.0 - u) * pa

        # gaussian mutation on the unnormalized genes
        mask = rng.random(children.shape) < params.mutation_rate
        noise = rng.normal(0.0, params.mutation_sigma, size=children.shape)
        children = np.where(mask, children + noise, children)
        children = np.maximum(children, GENE_FLOOR)

        children[: params.elitism_count] = elite
        pop = children
        fitness = np.array([evaluate(ind) for ind in pop])
        gen_best = int(fitness.argmin())
        if fitness[gen_best] < best_val:
            best_val = fitness[gen_best]
            best_genes = pop[gen_best].copy()
        if trace is not None:
            trace(gen, float(best_val))

    return _project(best_genes), float(best_val)


# per-generation progress hook: (context label, generation, best value)
TraceFn = Callable[[str, int, float], None]


def optimize_power_split(
    n_users: int,
    p0_db: float,
    code: CodeParams,
    params: GaParams,
    initial: Optional[Sequence[Sequence[float]]] = None,
    trace: Optional[TraceFn] = None,
) -> Tuple[np.ndarray, float]:
    """Minimize the worst per-user PER over the ratio simplex at one power."""
    p0 = 10.0 ** (p0_db / 10.0)

    def objective(alphas: np.ndarray) -> float:
        return max_user_per(alphas, p0, code)

    label = f"P0={p0_db:g}dB n={code.n}"
    hook = None if trace is None else (lambda g, v: trace(label, g, v))
    return ga_minimize(objective, n_users, params, initial=initial, trace=hook)


def _pareto_filter(points: List[ParetoPoint]) -> List[ParetoPoint]:
    """Drop points dominated in both objectives (lower power, lower PER)."""
    kept = []
    for cand in points:
        dominated = any(
            (o.p0_db <= cand.p0_db and o.max_per <= cand.max_per)
            and (o.p0_db < cand.p0_db or o.max_per < cand.max_per)
            for o in points
            if o is not cand
        )
        if not dominated:
            kept.append(cand)
    return sorted(kept, key=lambda pt: pt.p0_db)


def pareto_front(
    n_users: int,
    code: CodeParams,
    p0_db_grid: Sequence[float],
    params: GaParams,
    trace: Optional[TraceFn] = None,
) -> List[ParetoPoint]:
    """Scalarized bi-objective sweep: optimize the worst PER at each grid power.

    Each grid point runs its own GA (seed offset by the grid index) and
    the non-dominated subset of the results is returned sorted by power.
    """
    grid = [float(v) for v in p0_db_grid]
    if not grid:
        raise ValueError("p0_db_grid must be nonempty")
    points = []
    warm: Optional[List[Sequence[float]]] = None
    for idx, p0_db in enumerate(grid):
        point_params = replace(params, seed=params.seed + idx)
        alphas, val = optimize_power_split(
            n_users, p0_db, code, point_params, initial=warm, trace=trace
        )
        warm = [alphas]
        points.append(
            ParetoPoint(max_per=val, p0_db=p0_db, alphas=tuple(float(a) for a in alphas))
        )
    return _pareto_filter(points)


def min_blocklength(
    k: int,
    snr_db: float,
    n_users: int,
    target_per: float,
    params: GaParams,
    n_cap: int = 4096,
    coarse_stride: int = 8,
    trace: Optional[TraceFn] = None,
) -> Tuple[int, Tuple[float, ...]]:
    """Smallest blocklength n whose optimized worst PER meets target_per.

    Starts at n = k + 1 and scans upward.  A coarse pass with the given
    stride finds the first feasible stretch, then the stride window is
    rechecked one by one so the answer matches a stride-1 scan (the
    optimized worst PER decreases in n).  Optimized ratios are carried
    from one n to the next as GA warm starts.

    Raises InfeasibleError (carrying the best PER found) if the cap is
    reached without meeting the target.
    """
    if not 0.0 < target_per < 1.0:
        raise ValueError(f"target_per must lie in (0, 1), got {target_per!r}")
    if k < 1:
        raise ValueError("k must be at least 1")
    stride = max(1, int(coarse_stride))

    cache: dict[int, Tuple[np.ndarray, float]] = {}
    warm: Optional[List[Sequence[float]]] = None
    best_seen = math.inf

    def optimized(n: int) -> Tuple[np.ndarray, float]:
        nonlocal warm, best_seen
        if n not in cache:
            point_params = replace(params, seed=params.seed + n)
            alphas, val = optimize_power_split(
                n_users, snr_db, CodeParams(k=k, n=n), point_params,
                initial=warm, trace=trace,
            )
            warm = [alphas]
            best_seen = min(best_seen, val)
            cache[n] = (alphas, val)
        return cache[n]

    start = k + 1
    feasible_n = None
    n = start
    while n <= n_cap:
        _, val = optimized(n)
        if val <= target_per:
            feasible_n = n
            break
        n += stride
    if feasible_n is None:
        raise InfeasibleError(
            f"no blocklength up to {n_cap} meets PER {target_per:g} "
            f"at {snr_db:g} dB (best {best_seen:.3e})",
            best_value=best_seen,
        )

    # walk the preceding stride window to find the exact crossing
    for m in range(max(start, feasible_n - stride + 1), feasible_n):
        _, val = optimized(m)
        if val <= target_per:
            feasible_n = m
            break

    alphas, _ = cache[feasible_n]
    return feasible_n, tuple(float(a) for a in alphas)
