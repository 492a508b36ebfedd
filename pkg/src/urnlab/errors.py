class UrnLabError(Exception):
    """Base class for every error raised by urnlab."""


class KernelError(UrnLabError, ValueError):
    pass


class NonStochasticRow(KernelError):
    def __init__(self, u: int, total: float):
        self.u = u
        self.total = total
        super().__init__(f"Row {u} sums to {float(total)!r}, expected 1")


class NegativeEntry(KernelError):
    def __init__(self, u: int, v: int):
        self.u = u
        self.v = v
        super().__init__(f"Negative entry at ({u}, {v})")


class UnknownGenerator(KernelError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unknown kernel generator: {name!r}")


class TruncationOverflow(UrnLabError, RuntimeError):
    def __init__(self, support: int, cap: int):
        self.support = support
        self.cap = cap
        super().__init__(f"Required support {support} exceeds the cap of {cap} colors (URNLAB_MAX_SUPPORT)")


class NoConvergence(UrnLabError, RuntimeError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"No convergence after {iterations} iterations, residual is {residual:e}")


class NoDecay(UrnLabError, RuntimeError):
    def __init__(self, first: float, last: float):
        self.first = first
        self.last = last
        super().__init__(f"Sup error did not halve: e_1={first:e}, e_n_max={last:e}")


class ZeroMass(UrnLabError, ValueError):
    def __init__(self, what: str = "initial measure"):
        super().__init__(f"The {what} has zero total mass")


class HorizonTooLarge(UrnLabError, ValueError):
    def __init__(self, horizon: int, cap: int):
        self.horizon = horizon
        self.cap = cap
        super().__init__(f"Horizon {horizon} exceeds the enumeration cap {cap}")


class InfiniteSupportReachable(UrnLabError, ValueError):
    def __init__(self, color: int):
        self.color = color
        super().__init__(f"Row of color {color} has infinite support; exact enumeration refused")


class UnknownVertex(UrnLabError, KeyError):
    def __init__(self, vertex: int):
        self.vertex = vertex
        super().__init__(f"Vertex {vertex} is not in the tree")


class MissingCertificate(UrnLabError, ValueError):
    def __init__(self):
        super().__init__("An ergodicity certificate is required for this check")


class RegimeMismatch(UrnLabError, ValueError):
    def __init__(self, r: float, regime: str):
        self.r = r
        self.regime = regime
        super().__init__(f"r={r} is inconsistent with regime {regime!r}")


class HorizonMismatch(UrnLabError, ValueError):
    def __init__(self, a: int, b: int):
        super().__init__(f"Laws have different horizons: {a} != {b}")


class ConfigError(UrnLabError, ValueError):
    def __init__(self, errors: dict[str, str]):
        self.errors = errors
        lines = "\n".join(f"  {field}: {msg}" for field, msg in errors.items())
        super().__init__(f"Invalid configuration:\n{lines}")
