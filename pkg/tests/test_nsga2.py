import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazecast.errors import InfeasibleBounds, NonFiniteObjective, ValidationError
from hazecast.nsga2 import (
    Choice,
    GenomeSpace,
    Int,
    Real,
    SearchConfig,
    crowding_distance,
    evolve,
    fast_nondominated_sort,
    hypervolume_2d,
    random_search,
)

import oracles


def test_sort_examples():
    assert fast_nondominated_sort([(1, 1), (2, 2), (0, 3)]) == [[0, 2], [1]]
    assert fast_nondominated_sort([(1, 1)] * 4) == [[0, 1, 2, 3]]
    assert fast_nondominated_sort([(1, 3), (2, 2), (3, 1)]) == [[0, 1, 2]]
    with pytest.raises(NonFiniteObjective):
        fast_nondominated_sort([(1, math.nan)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 3)), min_size=1, max_size=40))
def test_sort_matches_oracle(objs):
    assert fast_nondominated_sort(objs) == oracles.dominance_fronts(objs)


def test_crowding_examples():
    assert crowding_distance([(0, 1)]) == [math.inf]
    assert crowding_distance([(0, 1), (1, 0)]) == [math.inf, math.inf]
    cd = crowding_distance([(0, 2), (1, 1), (2, 0)])
    assert cd[1] == pytest.approx(2.0)
    assert cd[0] == cd[2] == math.inf


def test_crowding_is_permutation_invariant(rng):
    pts = [tuple(p) for p in rng.random((7, 2))]
    base = dict(zip(pts, crowding_distance(pts)))
    for perm in itertools.islice(itertools.permutations(range(7)), 0, 200, 17):
        shuffled = [pts[i] for i in perm]
        for p, c in zip(shuffled, crowding_distance(shuffled)):
            assert c == pytest.approx(base[p])


def test_hypervolume_simple():
    assert hypervolume_2d([(1, 1)], (2, 2)) == 1
    assert hypervolume_2d([(0, 1), (1, 0)], (2, 2)) == 3
    assert hypervolume_2d([(3, 3)], (2, 2)) == 0


def _schaffer(g):
    x = g["x"]
    return x * x, (x - 2) ** 2


def test_schaffer_front():
    space = GenomeSpace({"x": Real(-5, 5)})
    res = evolve(_schaffer, SearchConfig(population=20, generations=30, seed=0), space)
    xs = [ind.genome[0] for ind in res.front]
    assert all(-0.1 <= x <= 2.1 for x in xs)
    # analytic front f2 = (sqrt(f1) - 2)^2 for f1 in [0, 4]; area under it within the (4, 4) box
    exact = 16 - 8 / 3
    hv = hypervolume_2d([ind.objectives for ind in res.front], (4, 4))
    assert abs(hv - exact) / exact < 0.05


def test_identical_population_single_front():
    space = GenomeSpace({"a": Choice((1,))})
    res = evolve(lambda g: (1.0, 1.0), SearchConfig(population=4, generations=2), space)
    assert len(res.front) == 4


def test_evolve_deterministic_and_cached():
    space = GenomeSpace({"x": Real(-5, 5), "n": Int(0, 3), "c": Choice(("a", "b"))})
    calls = []

    def f(g):
        calls.append(g)
        return g["x"] ** 2 + g["n"], (g["x"] - 2) ** 2 + (g["c"] == "b")

    r1 = evolve(f, SearchConfig(population=8, generations=5, seed=3), space)
    n_calls = len(calls)
    r2 = evolve(f, SearchConfig(population=8, generations=5, seed=3), space)
    assert [i.genome for i in r1.front] == [i.genome for i in r2.front]
    assert n_calls == len(r1.evaluations) == len({tuple(g.values()) for g in calls[:n_calls]})
    assert all(space.contains(i.genome) for i in r1.population)


def test_repair_is_applied():
    space = GenomeSpace({"n": Int(0, 10)})
    res = evolve(lambda g: (g["n"], -g["n"]), SearchConfig(population=6, generations=3), space,
                 repair=lambda g: {"n": g["n"] - g["n"] % 2})
    assert all(i.genome[0] % 2 == 0 for i in res.evaluations)


def test_generation_callback_sees_sorted_unions():
    seen = []
    space = GenomeSpace({"x": Real(-5, 5)})
    evolve(_schaffer, SearchConfig(population=20, generations=5, seed=1), space,
           on_generation=lambda gen, objs, fronts: seen.append((objs, fronts)))
    assert len(seen) == 6
    for objs, fronts in seen:
        assert fronts == oracles.dominance_fronts(objs)


def test_random_search():
    space = GenomeSpace({"x": Real(-5, 5)})
    best, trials = random_search(_schaffer, 1, space, seed=0)
    assert len(trials) == 1 and best.genome == trials[0].genome
    _, t1 = random_search(_schaffer, 20, space, seed=4)
    best, t2 = random_search(_schaffer, 20, space, seed=4)
    assert [t.genome for t in t1] == [t.genome for t in t2]
    assert all(best.objectives[0] <= t.objectives[0] for t in t2)


def test_config_and_space_validation():
    with pytest.raises(ValidationError):
        SearchConfig(population=5)
    with pytest.raises(InfeasibleBounds):
        GenomeSpace({"x": Real(1, 0)})
    with pytest.raises(InfeasibleBounds):
        GenomeSpace({"c": Choice(())})
