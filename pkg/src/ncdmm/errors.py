"""Exception hierarchy shared by all modules."""


class NcdmmError(Exception):
    """Base class for every error raised by the package."""


class GeometryError(NcdmmError):
    """Invalid boundary, cloud or virtual-node placement."""


class ConnectivityError(NcdmmError):
    """A node ends up with too few neighbours or the input graph is malformed."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StencilError(NcdmmError):
    """The local least-squares system of a node is rank deficient."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ControlVolumeError(NcdmmError):
    """Control-volume system could not be assembled or solved to a positive result."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class PhysicsError(NcdmmError):
    """Unphysical property evaluation (negative volume factor, porosity out of range...)."""


class ConvergenceError(NcdmmError):
    """Newton iteration or time stepping failed."""


class ConfigError(NcdmmError):
    """Invalid run configuration; ``key`` and ``line`` point at the offending entry."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f" [key '{key}'" + (f", line {line}]" if line is not None else "]")
        super().__init__(message + where)
        self.key = key
        self.line = line
