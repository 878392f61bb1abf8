# harness.py - command line front end for the coded matrix-vector toolkit.

"""Run experiments from a JSON configuration and write their reports.

Commands: plan, verify, simulate, fl-demo.  Options given on the command
line override the configuration file.  Exit codes: 0 success, 2 config
error, 3 verification failure, 4 decode failure in required-success mode.
"""

import copy
import csv
import json
import logging
import optparse
import os
import sys

import numpy as np

import coding
import decoding
import matrixcore
import simulator
from errors import (CodedMatvecError, ConfigError, DecodeError, DivergenceError,
                    GuardExceededError)
from manifest import RunManifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_DECODE = 4

EXPERIMENTS = ("rounds", "privacy", "sparse")

# columns per virtual worker in the generated fl-demo data
FL_BLOCK_COLS = 3

DEFAULTS = {
    "scheme": ["proposed"],
    "k_A": 10,
    "s": 2,
    "multipliers": None,
    "types": None,
    "base_width": None,
    "base_speed": 1.0,
    "matrix": {"source": "synthetic", "path": None, "rows": 120, "cols": None,
               "density_zeros": 0.0, "seed": None, "format": "dense"},
    "timing": {"noise": True, "shift": None, "rate": None, "per_type": None,
               "stragglers": [], "straggler_probability": 0.0, "slowdown": None},
    "comm": {"latency": 0.01, "per_byte": 1e-8, "bytes_per_element": 8,
             "broadcast": 0.0},
    "experiments": ["rounds", "privacy"],
    "trials": 11,
    "warmup": 2,
    "densities": [0.95, 0.98, 0.99],
    "max_workers": 4,
    "scale": 10,
    "seed": 0,
    "out": "out",
    "fl": {"path": None, "rows": 60, "cols": None, "steps": 100, "stepsize": None,
           "stragglers": 2, "check": False},
    "max_subsets": decoding.MAX_SUBSETS,
    "sampled": False,
    "samples": 1000,
    "require_success": False,
}

def _merge(base, overrides, prefix=""):
    for key, value in overrides.items():
        if key not in base:
            raise ConfigError(prefix + key, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(prefix + key, "expected an object")
            _merge(base[key], value, prefix + key + ".")
        else:
            base[key] = value

def _integer(field, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, "expected an integer, got %r" % (value,))
    if minimum is not None and value < minimum:
        raise ConfigError(field, "must be at least %d" % minimum)
    return value

def _number(field, value, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, "expected a number, got %r" % (value,))
    if minimum is not None and value < minimum:
        raise ConfigError(field, "must be at least %g" % minimum)
    if maximum is not None and value > maximum:
        raise ConfigError(field, "must be at most %g" % maximum)
    return float(value)

def _positive(field, value):
    value = _number(field, value)
    if value <= 0:
        raise ConfigError(field, "must be positive")
    return value

def _boolean(field, value):
    if not isinstance(value, bool):
        raise ConfigError(field, "expected true or false, got %r" % (value,))
    return value

def _list(field, value):
    if not isinstance(value, list):
        raise ConfigError(field, "expected a list, got %r" % (value,))
    return value

def _path(field, value):
    if value is not None and (not isinstance(value, str) or not value):
        raise ConfigError(field, "expected a file name, got %r" % (value,))
    return value

def _read_matrix(field, path):
    try:
        return matrixcore.load_matrix(path)
    except (IOError, OSError, ValueError) as exc:
        raise ConfigError(field, "cannot read %s: %s" % (path, exc))

class ExperimentConfig(object):
    """A validated experiment description.

    data holds the merged JSON document; the derived roster, matrix shape
    and models are built once in validate().
    """

    def __init__(self, data=None, overrides=None):
        self.data = copy.deepcopy(DEFAULTS)
        for layer in (data, overrides):
            if layer:
                _merge(self.data, layer)
        self.validate()

    @classmethod
    def load(cls, path, overrides=None):
        try:
            with open(path) as f:
                data = json.load(f)
        except (IOError, OSError) as exc:
            raise ConfigError("config", "cannot read %s: %s" % (path, exc))
        except ValueError as exc:
            raise ConfigError("config", "%s is not valid JSON: %s" % (path, exc))
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        return cls(data, overrides)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def schemes(self):
        return self.data["scheme"]

    def validate(self):
        d = self.data
        if isinstance(d["scheme"], str):
            d["scheme"] = [d["scheme"]]
        if not _list("scheme", d["scheme"]):
            raise ConfigError("scheme", "at least one scheme is required")
        for scheme in d["scheme"]:
            if scheme not in coding.SCHEMES:
                raise ConfigError("scheme", "%r is not one of %s" %
                                  (scheme, ", ".join(coding.SCHEMES)))
        k_A = _integer("k_A", d["k_A"], 1)
        s = _integer("s", d["s"], 0)
        if s >= k_A:
            raise ConfigError("s", "s = %d passive clients must be fewer than k_A = %d "
                              "active clients" % (s, k_A))
        _integer("seed", d["seed"], 0)
        self.scale = _integer("scale", d["scale"], 1)
        _integer("trials", d["trials"], 0)
        _integer("warmup", d["warmup"], 0)
        _integer("samples", d["samples"], 1)
        _integer("max_subsets", d["max_subsets"], 1)
        if d["max_workers"] is not None:
            _integer("max_workers", d["max_workers"], 1)
        for name in ("sampled", "require_success"):
            _boolean(name, d[name])
        if not isinstance(d["out"], str) or not d["out"]:
            raise ConfigError("out", "expected a directory name, got %r" % (d["out"],))
        self.base_speed = _positive("base_speed", d["base_speed"])
        for experiment in _list("experiments", d["experiments"]):
            if experiment not in EXPERIMENTS:
                raise ConfigError("experiments", "%r is not one of %s" %
                                  (experiment, ", ".join(EXPERIMENTS)))
        for density in _list("densities", d["densities"]):
            _number("densities", density, 0.0, 1.0)

        multipliers = d["multipliers"]
        if multipliers is None:
            multipliers = [1] * (k_A + s)
        elif len(_list("multipliers", multipliers)) != k_A + s:
            raise ConfigError("multipliers", "%d multipliers for k_A + s = %d clients" %
                              (len(multipliers), k_A + s))
        for c in multipliers:
            _integer("multipliers", c, 1)
        self.multipliers = multipliers
        if d["types"] is not None:
            if len(_list("types", d["types"])) != k_A + s:
                raise ConfigError("types", "%d types for k_A + s = %d clients" %
                                  (len(d["types"]), k_A + s))
            for type_index in d["types"]:
                _integer("types", type_index, 0)
        k_bar = self.k_bar

        matrix = d["matrix"]
        if matrix["source"] not in ("synthetic", "file"):
            raise ConfigError("matrix.source", "expected 'synthetic' or 'file'")
        if matrix["format"] not in ("dense", "sparse"):
            raise ConfigError("matrix.format", "expected 'dense' or 'sparse'")
        if matrix["source"] == "file" and not _path("matrix.path", matrix["path"]):
            raise ConfigError("matrix.path", "a file source needs a path")
        if matrix["seed"] is not None:
            _integer("matrix.seed", matrix["seed"], 0)
        _number("matrix.density_zeros", matrix["density_zeros"], 0.0, 1.0)
        rows = _integer("matrix.rows", matrix["rows"], 1)
        self.rows = max(1, rows // self.scale)
        if matrix["cols"] is None:
            width = 1 if d["base_width"] is None else _integer("base_width", d["base_width"], 1)
            self.base_width = max(1, width // self.scale)
        else:
            cols = _integer("matrix.cols", matrix["cols"], 1)
            if cols % k_bar:
                raise ConfigError("matrix.cols", "%d columns do not split into %d "
                                  "blocks" % (cols, k_bar))
            self.base_width = max(1, cols // k_bar // self.scale)
        self.roster = self.build_roster(self.base_width)

        timing = d["timing"]
        _boolean("timing.noise", timing["noise"])
        if timing["shift"] is not None:
            _number("timing.shift", timing["shift"], 0.0)
        for name in ("rate", "slowdown"):
            if timing[name] is not None:
                _positive("timing." + name, timing[name])
        _number("timing.straggler_probability", timing["straggler_probability"], 0.0, 1.0)
        for client in _list("timing.stragglers", timing["stragglers"]):
            _integer("timing.stragglers", client, 0)
            if client >= len(self.roster):
                raise ConfigError("timing.stragglers", "no client W%d" % client)
        self.per_type = self._per_type(timing["per_type"])
        comm = d["comm"]
        for name in ("latency", "per_byte", "broadcast"):
            _number("comm." + name, comm[name], 0.0)
        _integer("comm.bytes_per_element", comm["bytes_per_element"], 1)

        fl = d["fl"]
        _path("fl.path", fl["path"])
        _integer("fl.rows", fl["rows"], 1)
        _integer("fl.steps", fl["steps"], 0)
        _integer("fl.stragglers", fl["stragglers"], 0)
        _boolean("fl.check", fl["check"])
        if fl["stepsize"] is not None:
            _number("fl.stepsize", fl["stepsize"], 0.0)
        if fl["cols"] is None:
            self.fl_cols = FL_BLOCK_COLS * k_bar
        else:
            self.fl_cols = _integer("fl.cols", fl["cols"], 1)
            if fl["path"] is None and self.fl_cols % k_bar:
                raise ConfigError("fl.cols", "%d columns do not split into %d blocks" %
                                  (self.fl_cols, k_bar))

    @property
    def k_bar(self):
        return sum(self.multipliers[:self.data["k_A"]])

    def build_roster(self, base_width):
        try:
            return coding.ClientRoster.from_multipliers(
                self.data["k_A"], self.multipliers, types=self.data["types"],
                base_width=base_width, base_speed=self.base_speed)
        except CodedMatvecError as exc:
            raise ConfigError("multipliers", str(exc))

    def _per_type(self, per_type):
        """Map type index to a (shift, rate) override, either may be None."""

        if per_type is None:
            return {}
        if not isinstance(per_type, dict):
            raise ConfigError("timing.per_type", "expected an object keyed by type")
        types = set(client.type_index for client in self.roster)
        result = {}
        for key, entry in per_type.items():
            field = "timing.per_type.%s" % key
            try:
                type_index = int(key)
            except ValueError:
                raise ConfigError(field, "keys must be type indices")
            if type_index not in types:
                raise ConfigError(field, "the roster has no type %d" % type_index)
            if not isinstance(entry, dict) or set(entry) - set(["shift", "rate"]):
                raise ConfigError(field, "expected an object with shift and rate")
            shift, rate = entry.get("shift"), entry.get("rate")
            if shift is not None:
                shift = _number(field + ".shift", shift, 0.0)
            if rate is not None:
                rate = _positive(field + ".rate", rate)
            result[type_index] = (shift, rate)
        return result

    def timing_model(self):
        t = self.data["timing"]
        return simulator.TimingModel(noise=t["noise"], shift=t["shift"], rate=t["rate"],
                                     per_type=self.per_type, stragglers=t["stragglers"],
                                     straggler_probability=t["straggler_probability"],
                                     slowdown=t["slowdown"])

    def comm_model(self, rows=None):
        c = self.data["comm"]
        return simulator.CommModel(latency=c["latency"], per_byte=c["per_byte"],
                                   bytes_per_element=c["bytes_per_element"],
                                   broadcast=c["broadcast"],
                                   block_rows=self.rows if rows is None else rows)

    def matrix(self):
        """The data matrix A: read from file, or synthetic of the scaled shape.

        A file's width fixes the block width, so the roster is rebuilt with
        base_width = cols / k_bar before it is returned.
        """

        m = self.data["matrix"]
        k_bar = self.k_bar
        if m["source"] == "file":
            A = _read_matrix("matrix.path", m["path"])
            if A.shape[1] % k_bar:
                raise ConfigError("matrix.path", "%d columns do not split into %d "
                                  "blocks" % (A.shape[1], k_bar))
            self.base_width = A.shape[1] // k_bar
            self.roster = self.build_roster(self.base_width)
            logger.debug("%s is %dx%d, block width %d", m["path"], A.shape[0],
                         A.shape[1], self.base_width)
            return A
        seed = self.seed if m["seed"] is None else m["seed"]
        rng = np.random.default_rng([seed, 1])
        cols = k_bar * self.base_width
        if m["format"] == "sparse":
            return matrixcore.random_sparse(self.rows, cols, m["density_zeros"], rng)
        A = matrixcore.random_dense(self.rows, cols, rng)
        if m["density_zeros"] > 0:
            A[rng.random(A.shape) < m["density_zeros"]] = 0.0
        return A

def _output(config, manifest, name):
    directory = config["out"]
    if not os.path.isdir(directory):
        os.makedirs(directory)
    return manifest.add(os.path.join(directory, name))

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

def _write_json(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")

def cmd_plan(config, manifest):
    """Write each scheme's plan as JSON with its allocation table."""

    for scheme in config.schemes:
        plan = coding.build_plan(scheme, config.roster, config.seed)
        path = _output(config, manifest, "plan-%s.json" % scheme)
        plan.save(path)
        table = coding.allocation_table(plan)
        with open(_output(config, manifest, "allocation-%s.txt" % scheme), "w") as f:
            f.write(table + "\n")
        logger.info("%s plan: k=%d s=%d, %d raw and %d coded sends", scheme, plan.k,
                    plan.s, len(plan.raw_transfers()), len(plan.coded_transfers()))
        print(table)
    return EXIT_OK

def cmd_verify(config, manifest, plan_path):
    """Certify a stored plan: subset ranks, matchings and straggler patterns."""

    plan = coding.CodingPlan.load(plan_path)
    d = config.data
    report = decoding.check_all_subsets(plan, config.seed, int(d["max_subsets"]),
                                        d["sampled"], d["samples"])
    roster = coding.roster_from_plan(plan)
    patterns = decoding.resilience_patterns(roster, plan, report)
    block, touching = decoding.tightness_witness(plan)

    data = report.to_dict()
    data["patterns"] = patterns.to_dict()
    data["pattern_lines"] = patterns.lines()
    data["tightness"] = {"block": block, "workers": touching}
    _write_json(_output(config, manifest, "resilience.json"), data)

    for line in patterns.lines():
        logger.info("%s", line)
    print("%d/%d subsets pass" % (report.subsets_checked - len(report.failures),
                                  report.subsets_checked))
    if report.failures or report.matching_failures or report.violations:
        logger.error("plan %s failed verification", plan_path)
        return EXIT_VERIFY
    return EXIT_OK

def cmd_simulate(config, manifest):
    """Run the configured experiments for every scheme and write CSV reports."""

    d = config.data
    A = None
    if "rounds" in d["experiments"]:
        A = config.matrix()
    roster = config.roster
    plans = [coding.build_plan(scheme, roster, config.seed) for scheme in config.schemes]
    status = EXIT_OK

    if A is not None:
        x = np.random.default_rng([config.seed, 2]).standard_normal(A.shape[0])
        timing, comm = config.timing_model(), config.comm_model(A.shape[0])
        rows = []
        for plan in plans:
            workload = None
            if d["trials"]:
                partitioned = matrixcore.equal_partition(A, plan.k)
                workload = coding.encode(partitioned, plan)
            for trial in range(d["trials"]):
                rng = np.random.default_rng([config.seed, 3, trial])
                report = simulator.simulate_round(plan, roster, timing, comm, rng,
                                                  workload, x)
                if report.decode_status != simulator.OK:
                    logger.error("%s trial %d: %s", plan.scheme, trial,
                                 report.decode_status)
                    if d["require_success"]:
                        status = EXIT_DECODE
                rows.append([trial] + report.row())
        _write_csv(_output(config, manifest, "rounds.csv"),
                   ("trial",) + simulator.SimReport.COLUMNS, rows)

    if "privacy" in d["experiments"]:
        rows = []
        for plan in plans:
            exposure = simulator.privacy_report(plan, roster)
            for client in roster:
                rows.append([plan.scheme, "W%d" % client.id, client.role,
                             client.type_index, str(exposure.raw[client.id]),
                             str(exposure.coded[client.id])])
        _write_csv(_output(config, manifest, "privacy.csv"),
                   ("scheme", "client", "role", "type", "raw_fraction",
                    "coded_support_fraction"), rows)

    if "sparse" in d["experiments"]:
        results = simulator.density_sweep(config.rows, roster, d["densities"],
                                          config.schemes, d["trials"], d["warmup"],
                                          d["max_workers"], config.seed)
        columns = simulator.BenchmarkRow.COLUMNS
        # wall-clock times are kept apart so sparse.csv stays reproducible
        _write_csv(_output(config, manifest, "sparse.csv"), columns[:-1],
                   [r.row()[:-1] for r in results])
        _write_csv(_output(config, manifest, "sparse-timing.csv"),
                   ("scheme", "density_zeros", "median_seconds"),
                   [[r.scheme, "%.4f" % r.density_zeros, "%.6e" % r.median]
                    for r in results])
        series = simulator.plot_series(results)
        _write_json(_output(config, manifest, "sparse-series.json"),
                    dict((scheme, {"x": xs, "y": ys})
                         for scheme, (xs, ys) in series.items()))
    return status

def _fl_dataset(config):
    fl = config["fl"]
    if fl["path"]:
        data = matrixcore.as_dense(_read_matrix("fl.path", fl["path"]))
        if data.shape[1] < 2:
            raise ConfigError("fl.path", "needs feature columns and a response column")
        return data[:, :-1], data[:, -1]
    rng = np.random.default_rng([config.seed, 4])
    D = rng.standard_normal((fl["rows"], config.fl_cols))
    return D, rng.standard_normal(fl["rows"])

def cmd_fl_demo(config, manifest):
    """Gradient descent with coded gradients; writes the trajectory as CSV."""

    fl = config["fl"]
    D, y = _fl_dataset(config)
    k_bar, _, _ = coding.expand_heterogeneous(config.roster)
    if D.shape[1] % k_bar:
        raise ConfigError("fl.path" if fl["path"] else "fl.cols",
                          "%d columns do not split into %d blocks" % (D.shape[1], k_bar))
    roster = coding.ClientRoster(config.roster.clients, base_width=D.shape[1] // k_bar,
                                 base_speed=config.roster.base_speed)
    stepsize = fl["stepsize"]
    if stepsize is None:
        stepsize = 0.5 * simulator.stepsize_limit(D)
    trajectory = simulator.fl_demo(D, y, roster, fl["steps"], stepsize,
                                   stragglers=fl["stragglers"], rng_seed=config.seed,
                                   check=fl["check"])
    rows = []
    for step, (beta, plain) in enumerate(zip(trajectory.betas, trajectory.oracle)):
        deviation = np.linalg.norm(beta - plain) / max(np.linalg.norm(plain), 1e-300)
        rows.append([step + 1, "%.12e" % trajectory.losses[step + 1],
                     "%.12e" % simulator.loss(D, y, plain), "%.3e" % deviation] +
                    ["%.12e" % b for b in beta])
    header = ["step", "loss", "oracle_loss", "deviation"] + \
             ["beta_%d" % i for i in range(D.shape[1])]
    _write_csv(_output(config, manifest, "trajectory.csv"), header, rows)
    logger.info("final loss %.6g after %d steps, %d retried rounds",
                trajectory.losses[-1], fl["steps"], trajectory.retries)
    return EXIT_OK

COMMANDS = {
    "plan": cmd_plan,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "fl-demo": cmd_fl_demo,
}

OPTS = optparse.OptionParser(prog="coded-matvec",
                             usage="%prog COMMAND [OPTIONS] [PLAN]",
                             description="Commands: %s" % ", ".join(sorted(COMMANDS)))
OPTS.add_option("--config", dest="config", default=None,
    help="JSON experiment configuration")
OPTS.add_option("--seed", dest="seed", type="int", default=None,
    help="Root seed for every random draw")
OPTS.add_option("--out", dest="out", default=None,
    help="Directory receiving the reports")
OPTS.add_option("--scale", dest="scale", type="int", default=None,
    help="Divide matrix dimensions by this factor")
OPTS.add_option("--scheme", dest="scheme", action="append", default=None,
    choices=coding.SCHEMES, help="Coding scheme, may be repeated")
OPTS.add_option("--sampled", dest="sampled", action="store_true", default=None,
    help="verify: check random subsets instead of all of them")
OPTS.add_option("--check", dest="check", action="store_true", default=False,
    help="fl-demo: fail when coded and uncoded trajectories disagree")
OPTS.add_option("--require-success", dest="require_success", action="store_true",
    default=None, help="simulate: exit 4 when any round fails to decode")
OPTS.add_option("-v", "--verbose", action="store_true", default=False,
    help="Log debugging detail")
OPTS.add_option("-q", "--quiet", action="store_true", default=False,
    help="Log warnings and errors only")

def overrides_from(options):
    overrides = {}
    for name in ("seed", "out", "scale", "scheme", "sampled", "require_success"):
        value = getattr(options, name)
        if value is not None:
            overrides[name] = value
    if options.check:
        overrides["fl"] = {"check": True}
    return overrides

def run(args):
    options, args = OPTS.parse_args(args)
    level = logging.INFO
    if options.verbose:
        level = logging.DEBUG
    elif options.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if not args or args[0] not in COMMANDS:
        OPTS.print_usage(sys.stderr)
        return EXIT_CONFIG
    command, rest = args[0], args[1:]
    if command == "verify" and len(rest) != 1:
        logger.error("verify takes exactly one plan file")
        return EXIT_CONFIG

    try:
        overrides = overrides_from(options)
        if options.config:
            config = ExperimentConfig.load(options.config, overrides)
        else:
            config = ExperimentConfig(overrides)
        identity = dict((k, v) for k, v in config.data.items() if k != "out")
        manifest = RunManifest(command, identity, config.seed)
        if command == "verify":
            status = cmd_verify(config, manifest, rest[0])
        else:
            status = COMMANDS[command](config, manifest)
        _output(config, manifest, "manifest.json")
        manifest.write(config["out"])
        return status
    except (ConfigError, GuardExceededError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DecodeError, DivergenceError) as exc:
        logger.error("%s", exc)
        return EXIT_DECODE
    except CodedMatvecError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (IOError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG

def main():
    sys.exit(run(sys.argv[1:]))

if __name__ == "__main__":
    main()
