"""Exception hierarchy shared by all modules."""


class AqcError(Exception):
    """Base class for toolkit errors."""


class DomainError(AqcError, ValueError):
    """An argument lies outside the admissible domain."""


class DimensionMismatchError(AqcError, ValueError):
    """Array shapes do not match the operator or grid."""


class UnsupportedFunctionError(AqcError, TypeError):
    """A function lacks a capability (derivative, closed form) that is needed."""


class InvalidNFunctionError(AqcError, ValueError):
    """Sampled values violate the N-function axioms."""


class DegenerateConjugateError(AqcError, ValueError):
    """The conjugate is infinite beyond a finite slope threshold."""

    def __init__(self, threshold, message=None):
        self.threshold = float(threshold)
        super().__init__(message or f"conjugate is +inf for t > {self.threshold:g} (function is not superlinear)")


class ClassViolationError(AqcError, ValueError):
    """A growth-class precondition (Delta_2, nabla_2) fails."""


class SingularSymbolError(AqcError, ValueError):
    """The symbol is not injective at some direction."""

    def __init__(self, witness, message=None):
        self.witness = witness
        super().__init__(message or f"symbol is singular at xi = {list(map(float, witness))}")


class NoKernelError(AqcError, ValueError):
    """An elliptic operator has no non-trivial symbol kernel."""


class UnsupportedBoundaryError(AqcError, ValueError):
    """The operation needs a different boundary mode."""


class MemoryCapError(AqcError, MemoryError):
    """The requested grid exceeds the configured memory cap."""


class ConfigError(AqcError, ValueError):
    """Malformed experiment configuration."""


class UnknownPresetError(ConfigError, KeyError):
    """A named operator or function preset does not exist."""

    def __str__(self):
        return Exception.__str__(self)


class SchemaError(AqcError, ValueError):
    """A report file does not follow the expected schema."""
