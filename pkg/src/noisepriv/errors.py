"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """An argument is outside the operation's domain."""


class StateError(RuntimeError):
    """The inputs are well-formed but the requested computation is not possible
    for this trace, graph, or knowledge regime."""
