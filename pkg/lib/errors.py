# errors.py - exceptions raised by the coded matrix-vector toolkit.

"""Define the toolkit's exceptions.

Library code raises these; only the command line front end turns them into
exit codes.
"""

class CodedMatvecError(Exception):
    pass

class DimensionError(CodedMatvecError):
    """Operand shapes do not agree."""
    pass

class PartitionError(CodedMatvecError):
    """Block widths do not add up to the matrix width."""
    pass

class ExpansionError(CodedMatvecError):
    """A block cannot be split into equal base-width pieces."""
    pass

class InvalidRosterError(CodedMatvecError):
    """The client roster violates the active/passive model constraints."""
    pass

class PlanError(CodedMatvecError):
    """A coding plan is malformed or does not fit its input."""
    pass

class EncodingError(CodedMatvecError):
    pass

class MatchingError(CodedMatvecError):
    pass

class GuardExceededError(CodedMatvecError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit

    def __str__(self):
        return "%d subsets exceed the exhaustive limit of %d, use sampled mode" % \
               (self.count, self.limit)

class DecodeError(CodedMatvecError):
    pass

class NotEnoughResultsError(DecodeError):
    def __init__(self, received, required):
        self.received = received
        self.required = required

    def __str__(self):
        return "received %d results, %d are required to decode" % \
               (self.received, self.required)

class RankDeficientError(DecodeError):
    def __init__(self, workers, pivot):
        self.workers = tuple(workers)
        self.pivot = pivot

    def __str__(self):
        return "coefficient rows of workers %s are rank deficient (pivot %.3g)" % \
               (list(self.workers), self.pivot)

class ConfigError(CodedMatvecError):
    def __init__(self, field, message):
        self.field = field
        self.message = message

    def __str__(self):
        return "invalid '%s': %s" % (self.field, self.message)

class StepsizeError(ConfigError):
    def __init__(self, stepsize, limit):
        ConfigError.__init__(self, "fl.stepsize",
                             "%g is not below the stability limit %g" % (stepsize, limit))
        self.stepsize = stepsize
        self.limit = limit

class DivergenceError(CodedMatvecError):
    def __init__(self, step, previous, current):
        self.step = step
        self.previous = previous
        self.current = current

    def __str__(self):
        return "loss increased at step %d: %.12g -> %.12g" % \
               (self.step, self.previous, self.current)
