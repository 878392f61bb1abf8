"""Worker assignments and encoders.

   The proposed scheme gives every virtual worker a random combination of
   s+1 cyclically consecutive block-columns, so each raw block travels to
   only s other clients.  Heterogeneous rosters are expanded into virtual
   workers of the weakest type before the same assignment is applied.
   Dense random and polynomial (Vandermonde) baselines are built as full
   plans too, so every scheme can be simulated and audited the same way."""

import json
import logging
from itertools import chain

import numpy as np

import matrixcore
from errors import EncodingError, InvalidRosterError, PlanError

logger = logging.getLogger(__name__)

ACTIVE = "active"
PASSIVE = "passive"

SCHEMES = ("proposed", "dense", "poly", "uncoded")

# draws closer to zero than this are redrawn
COEFF_EXCLUSION = 1e-6

class Client(object):
    def __init__(self, id, role, type_index=0, multiplier=1):
        self.id = int(id)
        self.role = role
        self.type_index = int(type_index)
        self.multiplier = int(multiplier)

    def __repr__(self):
        return "Client(%d, %s, type=%d, c=%d)" % (self.id, self.role,
                                                  self.type_index, self.multiplier)

    def __eq__(self, other):
        return isinstance(other, Client) and \
               (self.id, self.role, self.type_index, self.multiplier) == \
               (other.id, other.role, other.type_index, other.multiplier)

    def __hash__(self):
        return hash((self.id, self.role, self.type_index, self.multiplier))

    @property
    def label(self):
        return "W%d" % self.id

class ClientRoster(object):
    """Physical clients, active ones first, then passive ones.

    Client W_i of type j generates c_ij * base_width columns (when active)
    and processes columns at c_ij * base_speed per unit time.
    """

    def __init__(self, clients, base_width=1, base_speed=1.0):
        self.clients = list(clients)
        self.base_width = int(base_width)
        self.base_speed = float(base_speed)
        self.validate()

    @classmethod
    def homogeneous(cls, k_A, s, base_width=1, base_speed=1.0):
        return cls.from_multipliers(k_A, [1] * (k_A + s), base_width=base_width,
                                    base_speed=base_speed)

    @classmethod
    def from_multipliers(cls, k_A, multipliers, types=None, base_width=1,
                         base_speed=1.0):
        """Build a roster from per-client multipliers, active clients first.

        Without explicit types, clients sharing a multiplier share a type and
        types are numbered by increasing multiplier, so the weakest is type 0.
        """

        multipliers = [int(c) for c in multipliers]
        if types is None:
            ranks = dict((c, rank) for rank, c in enumerate(sorted(set(multipliers))))
            types = [ranks[c] for c in multipliers]
        elif len(types) != len(multipliers):
            raise InvalidRosterError("%d types for %d clients" %
                                     (len(types), len(multipliers)))
        clients = [Client(i, ACTIVE if i < k_A else PASSIVE, types[i], c)
                   for i, c in enumerate(multipliers)]
        return cls(clients, base_width=base_width, base_speed=base_speed)

    def __repr__(self):
        return "ClientRoster(%s, alpha=%d, beta=%g)" % (self.clients, self.base_width,
                                                        self.base_speed)

    def __len__(self):
        return len(self.clients)

    def __iter__(self):
        return iter(self.clients)

    @property
    def active(self):
        return [c for c in self.clients if c.role == ACTIVE]

    @property
    def passive(self):
        return [c for c in self.clients if c.role == PASSIVE]

    @property
    def k_A(self):
        return len(self.active)

    @property
    def s(self):
        return len(self.passive)

    def client(self, id):
        for client in self.clients:
            if client.id == id:
                return client
        raise KeyError(id)

    def is_homogeneous(self):
        return all(c.multiplier == 1 for c in self.clients)

    def validate(self):
        if not self.clients:
            raise InvalidRosterError("the roster is empty")
        if self.base_width < 1:
            raise InvalidRosterError("base width must be at least 1 column")
        if self.base_speed <= 0:
            raise InvalidRosterError("base speed must be positive")
        for client in self.clients:
            if client.role not in (ACTIVE, PASSIVE):
                raise InvalidRosterError("client %d has unknown role %r" %
                                         (client.id, client.role))
            if client.multiplier < 1:
                raise InvalidRosterError("client %d has multiplier %d, must be >= 1" %
                                         (client.id, client.multiplier))
        if [c.id for c in self.clients] != list(range(len(self.clients))):
            raise InvalidRosterError("client ids must be 0..n-1 in order")

        roles = [c.role for c in self.clients]
        if roles != sorted(roles):
            raise InvalidRosterError("active clients must precede passive clients")
        active, passive = self.active, self.passive
        if not active:
            raise InvalidRosterError("at least one active client is required")
        if len(passive) >= len(active):
            raise InvalidRosterError("s = %d passive clients must be fewer than "
                                     "k_A = %d active clients" % (len(passive), len(active)))

        for group in (active, passive):
            multipliers = [c.multiplier for c in group]
            if multipliers != sorted(multipliers, reverse=True):
                raise InvalidRosterError("multipliers must be non-increasing within "
                                         "each role: %s" % multipliers)

        for type_index in set(c.type_index for c in self.clients):
            n_active = sum(1 for c in active if c.type_index == type_index)
            n_passive = sum(1 for c in passive if c.type_index == type_index)
            if n_passive and n_passive >= n_active:
                # the expanded system only needs s_bar < k_bar, checked when planning
                logger.warning("type %d has %d passive and %d active clients",
                               type_index, n_passive, n_active)

class CodedBlockSpec(object):
    """One virtual worker's coded block: coeffs[i] multiplies block support[i]."""

    def __init__(self, worker, owner_client, support, coeffs, seed_tag=""):
        self.worker = int(worker)
        self.owner_client = int(owner_client)
        self.support = tuple(int(q) for q in support)
        self.coeffs = tuple(float(r) for r in coeffs)
        self.seed_tag = seed_tag
        if len(self.support) != len(self.coeffs):
            raise PlanError("worker %d has %d support blocks and %d coefficients" %
                            (self.worker, len(self.support), len(self.coeffs)))

    def __repr__(self):
        return "CodedBlockSpec(%d, owner=%d, %s)" % (self.worker, self.owner_client,
                                                     list(self.support))

    def row(self, k):
        """The coefficient row over all k blocks, zero off the support."""

        row = np.zeros(k, dtype=np.float64)
        for q, coeff in zip(self.support, self.coeffs):
            row[q] += coeff
        return row

    def to_dict(self):
        return {"worker": self.worker, "owner": self.owner_client,
                "support": list(self.support), "coeffs": list(self.coeffs),
                "seed_tag": self.seed_tag}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["worker"], data["owner"], data["support"],
                       data["coeffs"], data.get("seed_tag", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError("malformed worker spec %r: %s" % (data, exc))

class Transfer(object):
    """A D2D send: a raw block-column or a finished coded block."""

    RAW = "raw"
    CODED = "coded"

    def __init__(self, source, dest, kind, index):
        self.source = int(source)
        self.dest = int(dest)
        self.kind = kind
        self.index = int(index)

    def __repr__(self):
        return "Transfer(W%d -> W%d, %s %d)" % (self.source, self.dest, self.kind,
                                                self.index)

    def __eq__(self, other):
        return isinstance(other, Transfer) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def key(self):
        return (self.source, self.dest, self.kind, self.index)

    def to_dict(self):
        field = "block" if self.kind == self.RAW else "worker"
        return {"source": self.source, "dest": self.dest, "kind": self.kind,
                field: self.index}

    @classmethod
    def from_dict(cls, data):
        try:
            kind = data["kind"]
            if kind == cls.RAW:
                index = data["block"]
            elif kind == cls.CODED:
                index = data["worker"]
            else:
                raise ValueError("unknown transfer kind %r" % kind)
            return cls(data["source"], data["dest"], kind, index)
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError("malformed transfer %r: %s" % (data, exc))

class CodingPlan(object):
    """The assignment of coded blocks to n = k + s virtual workers.

    Workers 0..k-1 are active, k..n-1 passive.  The generator of block q is
    the owner of active worker q.  virtual_raw_transfers counts raw sends
    between virtual workers before same-client sends are collapsed.
    """

    def __init__(self, scheme, k, s, specs, transfers, weight=None, seed=None,
                 virtual_raw_transfers=None):
        self.scheme = scheme
        self.k = int(k)
        self.s = int(s)
        self.specs = list(specs)
        self.transfers = list(transfers)
        self.weight = weight if weight is not None else self.s + 1
        self.seed = seed
        if virtual_raw_transfers is None:
            virtual_raw_transfers = len(self.raw_transfers())
        self.virtual_raw_transfers = int(virtual_raw_transfers)
        self.validate()

    def __repr__(self):
        return "CodingPlan(%s, k=%d, s=%d, %d transfers)" % \
               (self.scheme, self.k, self.s, len(self.transfers))

    @property
    def n(self):
        return self.k + self.s

    def validate(self):
        if self.scheme not in SCHEMES:
            raise PlanError("unknown scheme %r" % self.scheme)
        if self.k < 1 or self.s < 0:
            raise PlanError("k = %d and s = %d do not describe a system" % (self.k, self.s))
        if [spec.worker for spec in self.specs] != list(range(self.n)):
            raise PlanError("plan must list workers 0..%d in order" % (self.n - 1))
        for spec in self.specs:
            if not spec.support:
                raise PlanError("worker %d has an empty support" % spec.worker)
            if any(q < 0 or q >= self.k for q in spec.support):
                raise PlanError("worker %d references blocks outside 0..%d" %
                                (spec.worker, self.k - 1))

    def coefficient_matrix(self):
        """The n x k matrix G with G[i, q] the weight of block q in worker i."""

        return np.vstack([spec.row(self.k) for spec in self.specs])

    def owners(self):
        return [spec.owner_client for spec in self.specs]

    def generator(self, block):
        """Physical client that generated raw block-column block."""

        return self.specs[block].owner_client

    def clients(self):
        seen = []
        for owner in self.owners():
            if owner not in seen:
                seen.append(owner)
        return seen

    def workers_of(self, client):
        return [spec.worker for spec in self.specs if spec.owner_client == client]

    def is_passive_worker(self, worker):
        return worker >= self.k

    def raw_transfers(self):
        return [t for t in self.transfers if t.kind == Transfer.RAW]

    def coded_transfers(self):
        return [t for t in self.transfers if t.kind == Transfer.CODED]

    def to_dict(self):
        return {"scheme": self.scheme, "k": self.k, "s": self.s,
                "weight": self.weight, "seed": self.seed,
                "virtual_raw_transfers": self.virtual_raw_transfers,
                "specs": [spec.to_dict() for spec in self.specs],
                "transfers": [t.to_dict() for t in self.transfers]}

    @classmethod
    def from_dict(cls, data):
        try:
            specs = [CodedBlockSpec.from_dict(d) for d in data["specs"]]
            transfers = [Transfer.from_dict(d) for d in data["transfers"]]
            return cls(data["scheme"], data["k"], data["s"], specs, transfers,
                       weight=data.get("weight"), seed=data.get("seed"),
                       virtual_raw_transfers=data.get("virtual_raw_transfers"))
        except (KeyError, TypeError) as exc:
            raise PlanError("malformed plan document: %s" % exc)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise PlanError("plan is not valid JSON: %s" % exc)
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.dumps())
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.loads(f.read())

class EncodedWorkload(object):
    """Coded matrices, one per virtual worker, with the coefficient matrix."""

    def __init__(self, plan, coded):
        self.plan = plan
        self.coded = list(coded)
        self.G = plan.coefficient_matrix()

    def __len__(self):
        return len(self.coded)

    def product(self, worker, x):
        return matrixcore.matvec_T(self.coded[worker], x)

    def products(self, x):
        return [self.product(worker, x) for worker in range(len(self.coded))]

    def nnz(self):
        return [matrixcore.nnz(block) for block in self.coded if block is not None]

def worker_stream(seed, worker):
    """Independent generator for one worker, keyed by root seed and index."""

    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(worker,)))

def draw_coefficients(rng, count, exclusion=COEFF_EXCLUSION):
    """count values uniform on [-1, 1], none within exclusion of zero."""

    values = rng.uniform(-1.0, 1.0, count)
    small = np.abs(values) < exclusion
    while small.any():
        values[small] = rng.uniform(-1.0, 1.0, int(small.sum()))
        small = np.abs(values) < exclusion
    return values

def cyclic_support(i, weight, k):
    return tuple((i + offset) % k for offset in range(weight))

def expand_heterogeneous(roster):
    """Map a heterogeneous roster onto virtual workers of the weakest type.

    Returns (k_bar, s_bar, owners) where owners[v] is the physical client id
    of virtual worker v.  Active client W_k owns the c_k consecutive virtual
    workers starting at the sum of the earlier active multipliers, and the
    passive clients do the same after k_bar.
    """

    roster.validate()
    owners = []
    for client in chain(roster.active, roster.passive):
        owners.extend([client.id] * client.multiplier)
    k_bar = sum(c.multiplier for c in roster.active)
    s_bar = sum(c.multiplier for c in roster.passive)
    return k_bar, s_bar, owners

def roster_from_plan(plan, base_width=1, base_speed=1.0):
    """Rebuild the roster a plan was made for from its worker owners."""

    multipliers = []
    for client in plan.clients():
        multipliers.append(len(plan.workers_of(client)))
    k_A = len(set(plan.owners()[:plan.k]))
    if plan.clients() != list(range(len(multipliers))):
        raise PlanError("plan owners %s are not clients 0..n-1 in order" % plan.clients())
    return ClientRoster.from_multipliers(k_A, multipliers, base_width=base_width,
                                         base_speed=base_speed)

def _coefficients(mode, seed, worker, count):
    if mode == "ones":
        return np.ones(count), "ones"
    elif mode == "random":
        return draw_coefficients(worker_stream(seed, worker), count), \
               "seed=%s/worker=%d" % (seed, worker)
    raise PlanError("unknown coefficient mode %r" % mode)

def _raw_transfers(wanted, owners):
    """Collapse (block, receiving worker) pairs into physical sends.

    A client receives a given raw block at most once and never from itself.
    """

    transfers = []
    seen = set()
    for block, worker in wanted:
        source, dest = owners[block], owners[worker]
        if source == dest or (block, dest) in seen:
            continue
        seen.add((block, dest))
        transfers.append(Transfer(source, dest, Transfer.RAW, block))
    return transfers

def _cyclic_plan(k, s, owners, seed, coefficients):
    if s < 0 or s >= k:
        raise InvalidRosterError("s = %d must satisfy 0 <= s < k_A = %d" % (s, k))
    weight = s + 1
    specs = []
    wanted = []
    for i in range(k):
        support = cyclic_support(i, weight, k)
        coeffs, tag = _coefficients(coefficients, seed, i, weight)
        specs.append(CodedBlockSpec(i, owners[i], support, coeffs, tag))
        wanted.extend((j, i) for j in support[1:])
    coded = []
    for i in range(s):
        worker = k + i
        coeffs, tag = _coefficients(coefficients, seed, worker, weight)
        specs.append(CodedBlockSpec(worker, owners[worker], specs[i].support,
                                    coeffs, tag))
        # the active worker with the same support combines and forwards it
        coded.append(Transfer(owners[i], owners[worker], Transfer.CODED, worker))
    if s == 0:
        logger.info("s = 0, the plan is the uncoded assignment")
    raw = _raw_transfers(wanted, owners)
    return CodingPlan("proposed", k, s, specs, raw + coded, weight=weight,
                      seed=seed, virtual_raw_transfers=len(wanted))

def build_homogeneous_plan(k_A, s, rng_seed=0, coefficients="random"):
    """Assign the proposed scheme to k_A active and s passive equal clients.

    Worker i combines blocks i..i+s (mod k_A); passive worker k_A+i repeats
    worker i's support with its own coefficients.
    """

    if k_A < 1:
        raise InvalidRosterError("k_A must be at least 1")
    owners = list(range(k_A + max(s, 0)))
    return _cyclic_plan(k_A, s, owners, rng_seed, coefficients)

def build_heterogeneous_plan(roster, rng_seed=0, coefficients="random"):
    k_bar, s_bar, owners = expand_heterogeneous(roster)
    if s_bar >= k_bar:
        raise InvalidRosterError("expanded system has s = %d >= k_A = %d" % (s_bar, k_bar))
    logger.debug("expanded roster to %d active and %d passive virtual workers",
                 k_bar, s_bar)
    return _cyclic_plan(k_bar, s_bar, owners, rng_seed, coefficients)

def _full_plan(scheme, k, owners, rows, tag):
    n = len(owners)
    specs = [CodedBlockSpec(i, owners[i], range(k), rows[i], tag(i)) for i in range(n)]
    # every block goes to every other client, which combines it locally
    wanted = [(j, i) for i in range(n) for j in range(k) if j != i]
    raw = _raw_transfers(wanted, owners)
    return CodingPlan(scheme, k, n - k, specs, raw, weight=k,
                      virtual_raw_transfers=len(wanted))

def _owners_for(roster, k, n):
    if roster is None:
        return k, list(range(n))
    k_bar, s_bar, owners = expand_heterogeneous(roster)
    return k_bar, owners

def build_dense_plan(k_A, n, rng_seed=0, roster=None):
    """Dense random baseline: every worker combines all k_A blocks."""

    k, owners = _owners_for(roster, k_A, n)
    if len(owners) < k:
        raise InvalidRosterError("n = %d workers cannot cover k_A = %d blocks" %
                                 (len(owners), k))
    rows = [draw_coefficients(worker_stream(rng_seed, i), k) for i in range(len(owners))]
    plan = _full_plan("dense", k, owners, rows,
                      lambda i: "seed=%s/worker=%d" % (rng_seed, i))
    plan.seed = rng_seed
    return plan

def evaluation_points(n):
    return [float(i) for i in range(1, n + 1)]

def build_polynomial_plan(k_A, n, points=None, roster=None):
    """Polynomial code baseline: worker i evaluates sum_q A_q x_i^q."""

    k, owners = _owners_for(roster, k_A, n)
    if points is None:
        points = evaluation_points(len(owners))
    points = [float(x) for x in points]
    if len(points) != len(owners):
        raise PlanError("%d evaluation points for %d workers" % (len(points), len(owners)))
    if len(set(points)) != len(points):
        raise PlanError("evaluation points must be pairwise distinct: %s" % points)
    rows = np.vander(np.asarray(points), k, increasing=True)
    return _full_plan("poly", k, owners, rows, lambda i: "x=%r" % points[i])

def build_uncoded_plan(k_A, roster=None):
    """Each active worker computes its own block; passive workers idle."""

    if roster is not None:
        k_A, _, owners = expand_heterogeneous(roster)
    else:
        owners = list(range(k_A))
    plan = _cyclic_plan(k_A, 0, owners, None, "ones")
    plan.scheme = "uncoded"
    return plan

def build_plan(scheme, roster, rng_seed=0, points=None):
    """Build the named scheme's plan for a roster."""

    if scheme == "proposed":
        return build_heterogeneous_plan(roster, rng_seed)
    elif scheme == "dense":
        return build_dense_plan(None, None, rng_seed, roster=roster)
    elif scheme == "poly":
        return build_polynomial_plan(None, None, points, roster=roster)
    elif scheme == "uncoded":
        return build_uncoded_plan(None, roster=roster)
    raise PlanError("unknown scheme %r" % scheme)

def encode(partitioned, plan, workers=None):
    """Compute the coded blocks from the plan's coefficients.

    workers restricts encoding to those virtual workers; the others are
    left as None in the workload.
    """

    if len(partitioned) != plan.k:
        raise PlanError("plan expects %d blocks, the matrix has %d" %
                        (plan.k, len(partitioned)))
    if partitioned.block_cols is None:
        raise EncodingError("blocks must share one width, got %s" % partitioned.widths)
    selected = set(range(plan.n) if workers is None else workers)
    coded = []
    for spec in plan.specs:
        if spec.worker not in selected:
            coded.append(None)
            continue
        blocks = [partitioned[q] for q in spec.support]
        coded.append(matrixcore.linear_combination(blocks, spec.coeffs))
        logger.debug("encoded worker %d from blocks %s", spec.worker, list(spec.support))
    return EncodedWorkload(plan, coded)

def encode_baseline_dense(partitioned, n, rng_seed=0):
    return encode(partitioned, build_dense_plan(len(partitioned), n, rng_seed))

def encode_baseline_polynomial(partitioned, n, points=None):
    return encode(partitioned, build_polynomial_plan(len(partitioned), n, points))

def block_name(q):
    return "A_%d" % q

def allocation_table(plan):
    """Human readable allocation, one line per virtual worker."""

    lines = ["%-6s %-8s %-7s %s" % ("client", "role", "worker", "combines")]
    for spec in plan.specs:
        role = PASSIVE if plan.is_passive_worker(spec.worker) else ACTIVE
        blocks = ", ".join(block_name(q) for q in spec.support)
        lines.append("%-6s %-8s %-7d {%s}" % ("W%d" % spec.owner_client, role,
                                              spec.worker, blocks))
    return "\n".join(lines)
