"""Exception hierarchy shared by the library and the command line tool."""


class AnisoTVError(Exception):
    """Base class for all errors raised by anisotv."""


class ShapeError(AnisoTVError, ValueError):
    """An array does not match the graph or grid it is paired with."""


class GraphError(AnisoTVError, ValueError):
    """Invalid graph structure (self-loops, anti-parallel edges, bad weights)."""


class TopologyError(GraphError):
    """The graph does not have the topology an operation requires."""


class InvariantError(AnisoTVError, ValueError):
    """A structural invariant (grid, partition, field) is violated."""


class RefinementError(InvariantError):
    """Two grids are not nested the way an operation requires."""


class InfeasibleCertificateError(AnisoTVError, ValueError):
    """A primal-dual pair violates a feasibility constraint."""

    def __init__(self, constraint, violation):
        self.constraint = constraint
        self.violation = violation
        super().__init__(f"{constraint} violated by {violation:.3e}")


class ConvergenceError(AnisoTVError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    The best iterate seen so far is attached so callers can still inspect it.
    """

    def __init__(self, message, best=None, gap=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.gap = gap
        self.iterations = iterations


class MembershipError(AnisoTVError, ValueError):
    """A point that should lie in a convex set does not."""


class AuditFailure(AnisoTVError, AssertionError):
    """A sampled competitor beat the claimed minimizer by more than tolerance."""

    def __init__(self, report, witness):
        self.report = report
        self.witness = witness
        super().__init__(f"audit violated: {witness}")


class ParseError(AnisoTVError, ValueError):
    """Malformed input file; carries the line or byte position."""

    def __init__(self, message, path=None, line=None, byte=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if byte is not None:
            where.append(f"byte {byte}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.byte = byte
