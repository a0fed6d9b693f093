"""Independent oracles used by the test suite.

These deliberately re-derive expected results by brute force or textbook
formulas, sharing no code path with the implementations they check.
"""

import math
import statistics
from itertools import combinations


def optimal_1d_wcss(values, k):
    """Globally optimal k-means WCSS by brute force over contiguous partitions.

    Optimal 1-D clusters are contiguous in sorted order, so trying every way
    to cut the sorted sequence into k runs is exhaustive.
    """
    xs = sorted(values)
    n = len(xs)
    best = math.inf
    for cuts in combinations(range(1, n), k - 1):
        bounds = (0, *cuts, n)
        total = 0.0
        feasible = True
        for lo, hi in zip(bounds, bounds[1:]):
            group = xs[lo:hi]
            if not group:
                feasible = False
                break
            mu = sum(group) / len(group)
            total += sum((x - mu) ** 2 for x in group)
        if feasible and total < best:
            best = total
    return best


def normal_mean_ci(samples, z=1.6449):
    """Textbook normal-approximation CI of the mean (n >= 2)."""
    n = len(samples)
    mean = sum(samples) / n
    sd = statistics.stdev(samples)
    half = z * sd / math.sqrt(n)
    return mean - half, mean + half


def brute_force_plan(cluster_entries, m_prime, v_adj, live=None, blacklist=frozenset()):
    """Reference planner: filter by rate capacity, argmax low(c), fixed ties.

    cluster_entries: model -> {"tau": (low, high), "c": (low, high)} from the
    rule matrix. live, when given, carries the current model's live-window
    (low, high) pairs and overrides its matrix entries. Returns the chosen
    model id, or None when the planner must persist.
    """
    candidates = []
    for model, entry in cluster_entries.items():
        if model in blacklist:
            continue
        if model == m_prime and live is not None:
            tau_low, tau_high = live["tau"]
            c_low, _ = live["c"]
        else:
            tau_low, tau_high = entry["tau"]
            c_low, _ = entry["c"]
        capacity = math.inf if tau_low <= 0 else 1.0 / tau_low
        if v_adj <= capacity:
            candidates.append((model, c_low, tau_high))
    if not candidates:
        return None
    ranked = sorted(
        candidates,
        key=lambda t: (-t[1], 0 if t[0] == m_prime else 1, t[2], t[0]),
    )
    winner = ranked[0][0]
    return None if winner == m_prime else winner
