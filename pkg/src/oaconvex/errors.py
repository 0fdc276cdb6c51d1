"""Exception hierarchy shared across the solver modules."""


class OAConvexError(Exception):
    pass


class DomainError(OAConvexError, ValueError):
    """Point evaluation left the domain of a node (log of nonpositive, 1/0, ...)."""


class EmptyDomain(OAConvexError):
    """An interval argument lies entirely outside a node's domain."""


class UnboundedBox(OAConvexError):
    """A relaxation needs finite bounds on a variable that has none."""


class AssignmentError(OAConvexError, ValueError):
    pass


class NonBinaryError(OAConvexError):
    pass


class ModelError(OAConvexError, ValueError):
    """Malformed model input."""


class IterationLimit(OAConvexError):
    pass
