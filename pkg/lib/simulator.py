"""Desk-scale simulation of coded D2D offloading rounds.

   A round tallies the D2D sends a plan needs, prices them with a parametric
   communication model, draws compute times for every physical client (its
   virtual workers run one after another at the client's rate), orders the
   arrivals and decodes from the fastest k results.  The module also
   measures raw data exposure per client, times coded sparse products, and
   runs gradient descent with the gradient product routed through the
   coded pipeline."""

import logging
import statistics
import time
from fractions import Fraction

import numpy as np

import coding
import decoding
import matrixcore
from errors import DecodeError, DivergenceError, StepsizeError

logger = logging.getLogger(__name__)

OK = "ok"
INSUFFICIENT = "insufficient"
RANK_DEFICIENT = "rank-deficient"

def _generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

class TimingModel(object):
    """Shifted exponential compute times.

    A virtual worker of a client with multiplier c takes alpha / (c beta)
    plus exponential noise of rate `rate`.  per_type maps a type index to a
    (shift, rate) pair overriding the defaults for clients of that type.
    Stragglers are either the explicit client ids in `stragglers` or drawn
    with straggler_probability per client; a straggler fails outright
    unless slowdown multiplies its time instead.
    """

    def __init__(self, noise=True, shift=None, rate=None, per_type=None,
                 stragglers=(), straggler_probability=0.0, slowdown=None):
        self.noise = noise
        self.shift = shift
        self.rate = rate
        self.per_type = dict(per_type or {})
        self.stragglers = set(stragglers)
        self.straggler_probability = float(straggler_probability)
        self.slowdown = slowdown

    def parameters(self, client, roster):
        base = float(roster.base_width) / (client.multiplier * roster.base_speed)
        shift, rate = self.per_type.get(client.type_index, (None, None))
        if shift is None:
            shift = self.shift
        if rate is None:
            rate = self.rate
        if shift is None:
            shift = base
        if rate is None:
            rate = 1.0 / shift if shift > 0 else float("inf")
        return shift, rate

    def duration(self, client, roster, rng):
        shift, rate = self.parameters(client, roster)
        if not self.noise or rate == float("inf"):
            return shift
        return shift + rng.exponential(1.0 / rate)

    def pick_stragglers(self, roster, rng):
        picked = set(self.stragglers)
        if self.straggler_probability > 0:
            for client in roster:
                if rng.random() < self.straggler_probability:
                    picked.add(client.id)
        return picked

class CommModel(object):
    """Parametric D2D cost: every send costs latency + bytes * per_byte.

    A client's outgoing sends are serialized on its own link; the D2D phase
    lasts as long as the busiest sender.  broadcast is the time the server
    needs to deliver x to every client.
    """

    def __init__(self, latency=0.01, per_byte=1e-8, bytes_per_element=8,
                 broadcast=0.0, block_rows=1):
        self.latency = float(latency)
        self.per_byte = float(per_byte)
        self.bytes_per_element = int(bytes_per_element)
        self.broadcast = float(broadcast)
        self.block_rows = int(block_rows)
        for name in ("latency", "per_byte", "broadcast"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be nonnegative" % name)

    def block_bytes(self, block_cols):
        return self.block_rows * block_cols * self.bytes_per_element

    def send_cost(self, block_cols):
        return self.latency + self.block_bytes(block_cols) * self.per_byte

    def delay(self, transfers, block_cols):
        busy = {}
        for transfer in transfers:
            busy[transfer.source] = busy.get(transfer.source, 0.0) + \
                                    self.send_cost(block_cols)
        return max(busy.values()) if busy else 0.0

class PrivacyExposure(object):
    """Per client: the share of A seen uncoded, and the share appearing in
    any block the client holds, raw or coded.  Shares are exact fractions."""

    def __init__(self, raw, coded):
        self.raw = dict(raw)
        self.coded = dict(coded)

    def __repr__(self):
        return "PrivacyExposure(%s)" % dict((c, str(f)) for c, f in self.raw.items())

    def raw_fraction(self, client):
        return self.raw[client]

    def coded_support_fraction(self, client):
        return self.coded[client]

    def to_dict(self):
        return dict(("W%d" % client, {"raw_fraction": str(self.raw[client]),
                                      "coded_support_fraction": str(self.coded[client])})
                    for client in sorted(self.raw))

def privacy_report(plan, roster):
    """Count the block-columns each client sees raw and coded."""

    raw = dict((client.id, set()) for client in roster)
    coded = dict((client.id, set()) for client in roster)
    for spec in plan.specs:
        if not plan.is_passive_worker(spec.worker):
            raw[spec.owner_client].add(spec.worker)
        coded[spec.owner_client].update(spec.support)
    for transfer in plan.transfers:
        if transfer.kind == coding.Transfer.RAW:
            raw[transfer.dest].add(transfer.index)
        else:
            coded[transfer.dest].update(plan.specs[transfer.index].support)
    total = plan.k
    return PrivacyExposure(
        dict((c, Fraction(len(blocks), total)) for c, blocks in raw.items()),
        dict((c, Fraction(len(blocks | raw[c]), total)) for c, blocks in coded.items()))

class SimReport(object):
    """Metrics of one simulated round."""

    COLUMNS = ("scheme", "k", "s", "raw_transfers", "coded_transfers", "block_sends",
               "virtual_raw_transfers", "bytes_d2d", "comm_delay", "completion_time",
               "stragglers", "results_received", "decode_status", "decode_residual",
               "max_raw_fraction", "max_coded_fraction")

    def __init__(self, plan):
        self.scheme = plan.scheme
        self.k = plan.k
        self.s = plan.s
        self.virtual_raw_transfers = plan.virtual_raw_transfers
        self.raw_block_transfers = len(plan.raw_transfers())
        self.coded_block_transfers = len(plan.coded_transfers())
        self.total_bytes_d2d = 0
        self.comm_delay = 0.0
        self.compute_times = {}
        self.stragglers = []
        self.arrival = []
        self.completion_time = None
        self.decode_status = None
        self.decode_residual = None
        self.result = None
        self.privacy = None

    def __repr__(self):
        return "SimReport(%s, sends=%d, completion=%s, %s)" % \
               (self.scheme, self.block_sends, self.completion_time, self.decode_status)

    @property
    def block_sends(self):
        return self.raw_block_transfers + self.coded_block_transfers

    def row(self):
        values = {"scheme": self.scheme, "k": self.k, "s": self.s,
                  "raw_transfers": self.raw_block_transfers,
                  "coded_transfers": self.coded_block_transfers,
                  "block_sends": self.block_sends,
                  "virtual_raw_transfers": self.virtual_raw_transfers,
                  "bytes_d2d": self.total_bytes_d2d,
                  "comm_delay": "%.9g" % self.comm_delay,
                  "completion_time": "" if self.completion_time is None
                                     else "%.9g" % self.completion_time,
                  "stragglers": " ".join("W%d" % c for c in self.stragglers),
                  "results_received": len(self.arrival),
                  "decode_status": self.decode_status,
                  "decode_residual": "" if self.decode_residual is None
                                     else "%.3g" % self.decode_residual,
                  "max_raw_fraction": "", "max_coded_fraction": ""}
        if self.privacy is not None and self.privacy.raw:
            values["max_raw_fraction"] = str(max(self.privacy.raw.values()))
            values["max_coded_fraction"] = str(max(self.privacy.coded.values()))
        return [values[column] for column in self.COLUMNS]

def simulate_round(plan, roster, timing, comm, rng, workload=None, x=None):
    """Simulate one round of the plan on the roster.

    With a workload and x the products are computed and decoded for real;
    otherwise decodability of the first k arrivals is checked from the
    coefficient rows alone.  A failed decode is recorded, not raised.
    """

    rng = _generator(rng)
    report = SimReport(plan)
    alpha = roster.base_width

    report.total_bytes_d2d = len(plan.transfers) * comm.block_bytes(alpha)
    report.comm_delay = comm.delay(plan.transfers, alpha)
    start = report.comm_delay + comm.broadcast

    stragglers = timing.pick_stragglers(roster, rng)
    report.stragglers = sorted(stragglers)
    finish = {}
    for client in roster:
        workers = plan.workers_of(client.id)
        if not workers:
            continue
        elapsed = sum(timing.duration(client, roster, rng) for _ in workers)
        if client.id in stragglers:
            if timing.slowdown is None:
                logger.debug("client W%d failed", client.id)
                continue
            elapsed *= timing.slowdown
        report.compute_times[client.id] = elapsed
        finish[client.id] = start + elapsed

    # a client hands in all of its results when its last worker is done
    order = sorted(finish, key=lambda c: (finish[c], c))
    arrival, arrived_at = [], []
    for client in order:
        for worker in plan.workers_of(client):
            arrival.append(worker)
            arrived_at.append(finish[client])
    report.arrival = arrival

    if len(arrival) < plan.k:
        report.decode_status = INSUFFICIENT
        logger.info("round of %s: %d results, %d needed", plan.scheme,
                    len(arrival), plan.k)
    else:
        report.completion_time = arrived_at[plan.k - 1]
        report.decode_status = OK
        try:
            if workload is not None and x is not None:
                report.result = decoding.decode_workload(workload, x, arrival)
                report.decode_residual = report.result.residual
            else:
                G = plan.coefficient_matrix()
                decoding.factor(G[arrival[:plan.k]], arrival[:plan.k])
        except DecodeError as exc:
            report.decode_status = RANK_DEFICIENT
            logger.error("round of %s failed to decode: %s", plan.scheme, exc)

    report.privacy = privacy_report(plan, roster)
    return report

class BenchmarkRow(object):
    COLUMNS = ("scheme", "density_zeros", "workers_timed", "mean_nnz", "max_nnz",
               "block_nnz", "median_seconds")

    def __init__(self, scheme, density_zeros, nnz, block_nnz, median):
        self.scheme = scheme
        self.density_zeros = density_zeros
        self.nnz = list(nnz)
        self.block_nnz = block_nnz
        self.median = median

    def __repr__(self):
        return "BenchmarkRow(%s, zeta=%.3f, nnz=%.0f, %.3g s)" % \
               (self.scheme, self.density_zeros, self.mean_nnz, self.median)

    @property
    def mean_nnz(self):
        return float(np.mean(self.nnz))

    def row(self):
        return [self.scheme, "%.4f" % self.density_zeros, len(self.nnz),
                "%.1f" % self.mean_nnz, max(self.nnz), self.block_nnz,
                "%.6e" % self.median]

def sparse_compute_benchmark(partitioned, plans, x, trials=11, warmup=2,
                             max_workers=None):
    """Per-worker nnz and matvec time of every plan's coded blocks.

    Each timed worker's product is run warmup times, then timed trials
    times; a scheme's time is the median over workers of the per-worker
    medians.  Only the first max_workers workers are encoded and timed.
    """

    if trials <= 0:
        return []
    cells = partitioned.rows * partitioned.total_cols
    density = 1.0 - float(partitioned.nnz()) / cells
    block_nnz = max(matrixcore.nnz(block) for block in partitioned)
    rows = []
    for plan in plans:
        workers = range(plan.n if max_workers is None else min(max_workers, plan.n))
        workload = coding.encode(partitioned, plan, workers=workers)
        medians = []
        for worker in workers:
            block = workload.coded[worker]
            for _ in range(warmup):
                matrixcore.matvec_T(block, x)
            samples = []
            for _ in range(trials):
                began = time.perf_counter()
                matrixcore.matvec_T(block, x)
                samples.append(time.perf_counter() - began)
            medians.append(statistics.median(samples))
        nnz = [matrixcore.nnz(workload.coded[w]) for w in workers]
        row = BenchmarkRow(plan.scheme, density, nnz, block_nnz,
                           statistics.median(medians))
        logger.info("%s at %.1f%% zeros: %.0f nnz per worker, %.3g s", plan.scheme,
                    100 * density, row.mean_nnz, row.median)
        rows.append(row)
    return rows

def density_sweep(rows, roster, densities, schemes, trials=11, warmup=2,
                  max_workers=None, seed=0):
    """Run sparse_compute_benchmark on synthetic matrices of each density.

    The matrix has one block of roster.base_width columns per virtual
    active worker.
    """

    results = []
    k_bar, _, _ = coding.expand_heterogeneous(roster)
    for index, density in enumerate(densities):
        rng = np.random.default_rng([seed, index])
        A = matrixcore.random_sparse(rows, k_bar * roster.base_width, density, rng)
        partitioned = matrixcore.equal_partition(A, k_bar)
        x = rng.standard_normal(rows)
        plans = [coding.build_plan(scheme, roster, seed) for scheme in schemes]
        results.extend(sparse_compute_benchmark(partitioned, plans, x, trials,
                                                warmup, max_workers))
    return results

def plot_series(results):
    """Density versus median time, one (xs, ys) series per scheme."""

    series = {}
    for row in results:
        xs, ys = series.setdefault(row.scheme, ([], []))
        xs.append(row.density_zeros)
        ys.append(row.median)
    return series

class Trajectory(object):
    def __init__(self):
        self.losses = []
        self.betas = []
        self.oracle = []
        self.retries = 0

    def max_deviation(self):
        """Largest relative gap between coded and uncoded iterates."""

        worst = 0.0
        for coded, plain in zip(self.betas, self.oracle):
            scale = max(np.linalg.norm(plain), 1e-300)
            worst = max(worst, float(np.linalg.norm(coded - plain) / scale))
        return worst

def loss(D, y, beta):
    residual = D @ beta - y
    return float(residual @ residual)

def stepsize_limit(D):
    """1 / L for the gradient of ||D beta - y||^2, L = 2 sigma_max(D)^2."""

    sigma = np.linalg.norm(matrixcore.as_dense(D), 2)
    return 1.0 / (2.0 * sigma * sigma)

def fl_demo(D, y, roster, steps, stepsize, stragglers=2, rng_seed=0, beta0=None,
            check=False, tolerance=1e-6, max_retries=10):
    """Gradient descent on ||D beta - y||^2 with a coded gradient product.

    D is split among the roster's virtual workers and encoded once.  Each
    round the product D^T (D beta - y) is recovered from the fastest k
    results while `stragglers` random clients fail.  An uncoded run is kept
    alongside as the reference trajectory.
    """

    D = matrixcore.as_dense(D)
    y = np.asarray(y, dtype=np.float64).ravel()
    limit = stepsize_limit(D)
    if stepsize < 0 or stepsize >= limit:
        raise StepsizeError(stepsize, limit)

    plan = coding.build_heterogeneous_plan(roster, rng_seed)
    workload = coding.encode(matrixcore.equal_partition(D, plan.k), plan)
    comm = CommModel(block_rows=D.shape[0])
    rng = np.random.default_rng(rng_seed)
    clients = [client.id for client in roster]

    beta = np.zeros(D.shape[1]) if beta0 is None else np.array(beta0, dtype=np.float64)
    plain = beta.copy()
    trajectory = Trajectory()
    trajectory.losses.append(loss(D, y, beta))
    for step in range(1, steps + 1):
        x = D @ beta - y
        for attempt in range(max_retries + 1):
            failed = rng.choice(clients, size=min(stragglers, len(clients)), replace=False)
            timing = TimingModel(stragglers=[int(c) for c in failed])
            report = simulate_round(plan, roster, timing, comm, rng, workload, x)
            if report.decode_status == OK:
                break
            trajectory.retries += 1
            logger.warning("step %d: round failed (%s), redrawing stragglers",
                           step, report.decode_status)
        else:
            raise DecodeError("step %d failed after %d retries" % (step, max_retries))

        beta = beta - stepsize * 2.0 * report.result.concat()
        plain = plain - stepsize * 2.0 * (D.T @ (D @ plain - y))
        trajectory.betas.append(beta.copy())
        trajectory.oracle.append(plain.copy())

        current = loss(D, y, beta)
        previous = trajectory.losses[-1]
        if current > previous + 1e-12 * max(trajectory.losses[0], 1.0):
            raise DivergenceError(step, previous, current)
        trajectory.losses.append(current)

    if check and trajectory.max_deviation() > tolerance:
        raise DecodeError("coded trajectory deviates from the uncoded one by %.3g" %
                          trajectory.max_deviation())
    return trajectory
