"""Recover A^T x from returned coded products, and certify resilience.

   Decoding solves the square system formed by the first k returned
   coefficient rows.  The analysis side enumerates every k-subset of workers
   and checks numerical rank, bipartite perfect matchings (Hall's condition)
   and the neighborhood sizes the resilience proof guarantees."""

import logging
import math
from collections import Counter
from itertools import combinations, product

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching

from errors import (DecodeError, GuardExceededError, MatchingError,
                    NotEnoughResultsError, RankDeficientError)

logger = logging.getLogger(__name__)

# a pivot below this, relative to its equilibrated row, counts as zero
PIVOT_TOLERANCE = 1e-10
RESIDUAL_TOLERANCE = 1e-8
MAX_SUBSETS = 10 ** 6
MAX_PROFILE_WORKERS = 20
# subsets larger than this skip the neighborhood oracle in check_all_subsets
PROFILE_LIMIT = 12

class DecodeProblem(object):
    """Returned results in arrival order: (worker, coefficient row, product)."""

    def __init__(self, k, returned):
        self.k = int(k)
        self.returned = [(int(w), np.asarray(row, dtype=np.float64),
                          np.asarray(y, dtype=np.float64).ravel())
                         for w, row, y in returned]
        lengths = set(y.shape[0] for _, _, y in self.returned)
        if len(lengths) > 1:
            raise DecodeError("products have different lengths: %s" % sorted(lengths))
        for worker, row, _ in self.returned:
            if row.shape[0] != self.k:
                raise DecodeError("worker %d has a row over %d blocks, expected %d" %
                                  (worker, row.shape[0], self.k))

    @classmethod
    def from_products(cls, plan, workers, products):
        """Build a problem from a plan, an arrival order and product vectors."""

        G = plan.coefficient_matrix()
        return cls(plan.k, [(w, G[w], y) for w, y in zip(workers, products)])

    def __len__(self):
        return len(self.returned)

    @property
    def workers(self):
        return [w for w, _, _ in self.returned]

class DecodeResult(object):
    def __init__(self, block_products, residual, used_workers, condition=None):
        self.block_products = list(block_products)
        self.residual = float(residual)
        self.used_workers = tuple(used_workers)
        self.condition = condition

    def __repr__(self):
        return "DecodeResult(workers=%s, residual=%.3g)" % (list(self.used_workers),
                                                            self.residual)

    def concat(self):
        return np.concatenate(self.block_products)

def _equilibrate(G):
    scale = np.max(np.abs(G), axis=1)
    scale[scale == 0.0] = 1.0
    return G / scale[:, None], scale

def factor(G, workers=()):
    """LU factor a square coefficient matrix with row pivoting.

    Rows are scaled to unit max-norm first; a pivot under PIVOT_TOLERANCE
    raises RankDeficientError naming the workers.
    """

    scaled, scale = _equilibrate(np.asarray(G, dtype=np.float64))
    lu, piv = scipy.linalg.lu_factor(scaled, check_finite=False)
    pivot = float(np.min(np.abs(np.diag(lu)))) if lu.size else 0.0
    if not pivot >= PIVOT_TOLERANCE:
        raise RankDeficientError(workers, pivot)
    return lu, piv, scale

def is_full_rank(G):
    try:
        factor(G)
    except RankDeficientError:
        return False
    return True

def decode(problem, workers=None):
    """Solve G_S U = Y for the k block products.

    The first k returned rows are used unless workers names the subset.
    """

    k = problem.k
    if workers is None:
        if len(problem) < k:
            raise NotEnoughResultsError(len(problem), k)
        chosen = problem.returned[:k]
    else:
        by_worker = dict((w, (w, row, y)) for w, row, y in problem.returned)
        missing = [w for w in workers if w not in by_worker]
        if missing:
            raise DecodeError("workers %s did not return results" % missing)
        chosen = [by_worker[w] for w in workers]
        if len(chosen) != k:
            raise NotEnoughResultsError(len(chosen), k)

    used = [w for w, _, _ in chosen]
    G = np.vstack([row for _, row, _ in chosen])
    Y = np.vstack([y for _, _, y in chosen])
    lu, piv, scale = factor(G, used)
    U = scipy.linalg.lu_solve((lu, piv), Y / scale[:, None], check_finite=False)

    norm = np.linalg.norm(Y)
    rows = np.linalg.norm(G @ U - Y, axis=1)
    residual = float(rows.max() / norm) if norm > 0 else float(rows.max())
    if residual > RESIDUAL_TOLERANCE:
        raise DecodeError("residual %.3g of workers %s exceeds %g" %
                          (residual, used, RESIDUAL_TOLERANCE))
    logger.debug("decoded from workers %s, residual %.3g", used, residual)
    return DecodeResult(list(U), residual, used, float(np.linalg.cond(G)))

def decode_workload(workload, x, arrival):
    """Decode A^T x from the workload's products in arrival order."""

    products = [workload.product(w, x) for w in arrival]
    return decode(DecodeProblem.from_products(workload.plan, arrival, products))

class MatchingResult(object):
    def __init__(self, perfect, matching, violator=None):
        self.perfect = perfect
        self.matching = list(matching)
        self.violator = violator

    def __bool__(self):
        return self.perfect

    def __repr__(self):
        return "MatchingResult(perfect=%s, %s)" % (self.perfect, self.matching)

def bipartite_matching(adjacency, num_right):
    """Maximum matching of left vertices to right vertices.

    adjacency[u] lists the right neighbours of left vertex u.  When the
    matching is not perfect, violator holds a left set whose neighbourhood
    is smaller than itself (Hall's condition fails there).
    """

    num_left = len(adjacency)
    if num_left == 0:
        return MatchingResult(True, [])
    rows = [u for u, nbrs in enumerate(adjacency) for _ in nbrs]
    cols = [v for nbrs in adjacency for v in nbrs]
    if any(v < 0 or v >= num_right for v in cols):
        raise MatchingError("neighbour outside 0..%d" % (num_right - 1))
    graph = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                          shape=(num_left, num_right))
    match_left = maximum_bipartite_matching(graph, perm_type="column")
    matching = [(u, int(v)) for u, v in enumerate(match_left) if v >= 0]
    perfect = len(matching) == num_left and num_left <= num_right
    violator = None
    if len(matching) < num_left:
        violator = _hall_violator(adjacency, match_left)
    return MatchingResult(perfect, matching, violator)

def _hall_violator(adjacency, match_left):
    """Left vertices reachable by alternating paths from an unmatched one."""

    match_right = {}
    for u, v in enumerate(match_left):
        if v >= 0:
            match_right[int(v)] = u
    start = [u for u, v in enumerate(match_left) if v < 0][0]
    left, right = set([start]), set()
    frontier = [start]
    while frontier:
        u = frontier.pop()
        for v in adjacency[u]:
            if v in right:
                continue
            right.add(v)
            partner = match_right.get(v)
            if partner is not None and partner not in left:
                left.add(partner)
                frontier.append(partner)
    return sorted(left)

def check_hall_condition(plan, subset):
    """Perfect matching between the subset's equations and the k unknowns."""

    subset = list(subset)
    if len(subset) != plan.k:
        raise MatchingError("subset has %d workers, %d are needed" %
                            (len(subset), plan.k))
    adjacency = [plan.specs[w].support for w in subset]
    result = bipartite_matching(adjacency, plan.k)
    result.matching = [(subset[u], v) for u, v in result.matching]
    if result.violator is not None:
        result.violator = [subset[u] for u in result.violator]
    return result

def neighborhood_lower_bound(k, s, m):
    """Least number of unknowns any m equations of the cyclic plan touch."""

    if m < 1 or m > k:
        raise ValueError("m = %d must lie in 1..%d" % (m, k))
    weight = s + 1
    if m <= 2 * s:
        return min(weight + int(math.ceil(m / 2.0)) - 1, k)
    q = m - 2 * s
    return min(weight + s + q - 1, k)

def _popcount(mask):
    return bin(mask).count("1")

def neighborhood_profile(plan, workers):
    """For m = 1..len(workers), the smallest |N(C)| over all C of size m."""

    workers = list(workers)
    if len(workers) > MAX_PROFILE_WORKERS:
        raise GuardExceededError(2 ** len(workers), 2 ** MAX_PROFILE_WORKERS)
    masks = [sum(1 << q for q in set(plan.specs[w].support)) for w in workers]
    size = 1 << len(workers)
    union = [0] * size
    best = dict((m, plan.k) for m in range(1, len(workers) + 1))
    for subset in range(1, size):
        low = subset & -subset
        union[subset] = union[subset ^ low] | masks[low.bit_length() - 1]
        m = _popcount(subset)
        count = _popcount(union[subset])
        if count < best[m]:
            best[m] = count
    return best

class ResilienceReport(object):
    def __init__(self, plan, subsets_checked, failures, matching_failures,
                 conditions, violations, sampled=False, seed=None):
        self.scheme = plan.scheme
        self.k = plan.k
        self.s = plan.s
        self.subsets_checked = subsets_checked
        self.failures = [tuple(f) for f in failures]
        self.matching_failures = [tuple(f) for f in matching_failures]
        self.violations = list(violations)
        self.sampled = sampled
        self.seed = seed
        if conditions:
            self.min_condition = float(min(conditions))
            self.max_condition = float(max(conditions))
        else:
            self.min_condition = self.max_condition = None

    @property
    def certified(self):
        return not self.failures

    def __repr__(self):
        return "ResilienceReport(%s, %d/%d subsets decodable)" % \
               (self.scheme, self.subsets_checked - len(self.failures),
                self.subsets_checked)

    def to_dict(self):
        return {"scheme": self.scheme, "k": self.k, "s": self.s,
                "subsets_checked": self.subsets_checked,
                "sampled": self.sampled, "seed": self.seed,
                "certified": self.certified,
                "failures": [list(f) for f in self.failures],
                "matching_failures": [list(f) for f in self.matching_failures],
                "neighborhood_violations": self.violations,
                "min_condition": self.min_condition,
                "max_condition": self.max_condition}

def _subsets(n, k, sampled, samples, seed):
    if not sampled:
        return combinations(range(n), k)
    rng = np.random.default_rng(seed)
    return (tuple(sorted(int(w) for w in rng.choice(n, k, replace=False)))
            for _ in range(samples))

def check_all_subsets(plan, rng_seed=0, max_subsets=MAX_SUBSETS, sampled=False,
                      samples=1000):
    """Test every k-subset of workers for decodability.

    Each subset is checked for numerical rank and for a perfect matching;
    proposed plans small enough are also held to neighborhood_lower_bound.
    With sampled set, samples random subsets drawn from rng_seed are
    checked instead.
    """

    n, k = plan.n, plan.k
    total = math.comb(n, k)
    if total > max_subsets and not sampled:
        raise GuardExceededError(total, max_subsets)
    G = plan.coefficient_matrix()
    profile = plan.scheme == "proposed" and k <= PROFILE_LIMIT

    checked = 0
    failures, matching_failures, conditions, violations = [], [], [], []
    for subset in _subsets(n, k, sampled, samples, rng_seed):
        checked += 1
        rows = G[list(subset)]
        if not is_full_rank(rows):
            failures.append(subset)
        condition = np.linalg.cond(rows)
        if np.isfinite(condition):
            conditions.append(condition)
        if not check_hall_condition(plan, subset):
            matching_failures.append(subset)
        if profile:
            for m, measured in sorted(neighborhood_profile(plan, subset).items()):
                bound = neighborhood_lower_bound(k, plan.s, m)
                if measured < bound:
                    violations.append({"subset": list(subset), "m": m,
                                       "measured": measured, "bound": bound})
    if failures:
        logger.warning("%d of %d subsets are not decodable", len(failures), checked)
    else:
        logger.info("all %d subsets of %d workers are decodable", checked, k)
    return ResilienceReport(plan, checked, failures, matching_failures,
                            conditions, violations, sampled=sampled, seed=rng_seed)

def tightness_witness(plan):
    """An unknown and the workers touching it, for the least covered unknown.

    Removing those workers leaves that unknown in no equation, so the plan
    cannot be resilient to that many stragglers.
    """

    touching = dict((q, []) for q in range(plan.k))
    for spec in plan.specs:
        for q in set(spec.support):
            touching[q].append(spec.worker)
    block = min(touching, key=lambda q: (len(touching[q]), q))
    return block, touching[block]

class PatternReport(object):
    """Straggler patterns of physical clients grouped by client types.

    patterns maps a type multiset, a tuple of (type, count) pairs, to a dict
    with the number of straggler sets checked, whether all were tolerable,
    and the range of virtual workers they removed.
    """

    def __init__(self, patterns, maximal):
        self.patterns = patterns
        self.maximal = maximal

    @staticmethod
    def describe(key):
        if not key:
            return "no stragglers"
        return " + ".join("%dx type-%d" % (count, type_index) for type_index, count in key)

    def tolerable(self, key):
        return self.patterns[key]["tolerable"]

    def lines(self):
        lines = []
        for key in sorted(self.patterns, key=lambda key: (sum(c for _, c in key), key)):
            entry = self.patterns[key]
            lines.append("%s: %s" % (self.describe(key),
                                     "tolerable" if entry["tolerable"] else "not tolerable"))
        return lines

    def to_dict(self):
        return {"patterns": [dict(stragglers=self.describe(key),
                                  types=[list(p) for p in key], **entry)
                             for key, entry in sorted(self.patterns.items())],
                "maximal": [self.describe(key) for key in self.maximal]}

def _dominates(big, small):
    big, small = dict(big), dict(small)
    return big != small and all(big.get(t, 0) >= c for t, c in small.items())

def _type_loads(plan, clients):
    """Per client type, the sorted virtual worker counts of its clients."""

    loads = {}
    for client in clients:
        loads.setdefault(client.type_index, []).append(len(plan.workers_of(client.id)))
    for counts in loads.values():
        counts.sort()
    return loads

def resilience_patterns(roster, plan, report=None):
    """Which sets of physical stragglers the plan survives.

    A set is tolerable when the surviving virtual workers number at least k
    and contain no k-subset that failed the rank check.  Sets of up to n - k
    clients are enumerated.  When every client owns a virtual worker, larger
    sets leave fewer than k survivors, so they are summarized per type count
    without enumeration.
    """

    if report is None:
        report = check_all_subsets(plan)
    failing = [frozenset(f) for f in report.failures]
    clients = list(roster)
    loads = _type_loads(plan, clients)
    largest = len(clients)
    if all(min(counts) > 0 for counts in loads.values()):
        largest = min(largest, plan.n - plan.k)

    patterns = {}
    for size in range(largest + 1):
        for stragglers in combinations(clients, size):
            removed = set()
            for client in stragglers:
                removed.update(plan.workers_of(client.id))
            surviving = set(range(plan.n)) - removed
            tolerable = len(surviving) >= plan.k and \
                        not any(f <= surviving for f in failing)
            key = tuple(sorted(Counter(c.type_index for c in stragglers).items()))
            entry = patterns.setdefault(key, {"sets": 0, "tolerable": True,
                                              "min_removed": len(removed),
                                              "max_removed": len(removed)})
            entry["sets"] += 1
            entry["tolerable"] = entry["tolerable"] and tolerable
            entry["min_removed"] = min(entry["min_removed"], len(removed))
            entry["max_removed"] = max(entry["max_removed"], len(removed))

    types = sorted(loads)
    for picked in product(*[range(len(loads[t]) + 1) for t in types]):
        if sum(picked) <= largest:
            continue
        key = tuple((t, count) for t, count in zip(types, picked) if count)
        sets = 1
        for t, count in zip(types, picked):
            sets *= math.comb(len(loads[t]), count)
        patterns[key] = {"sets": sets, "tolerable": False,
                         "min_removed": sum(sum(loads[t][:count])
                                            for t, count in zip(types, picked)),
                         "max_removed": sum(sum(loads[t][len(loads[t]) - count:])
                                            for t, count in zip(types, picked))}
    if largest < len(clients):
        logger.debug("summarized straggler sets of more than %d clients", largest)

    tolerable = [key for key, entry in patterns.items() if entry["tolerable"]]
    maximal = sorted(key for key in tolerable
                     if not any(_dominates(other, key) for other in tolerable))
    return PatternReport(patterns, maximal)
