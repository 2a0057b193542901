"""Exception hierarchy shared by every engine module."""


class EngineError(Exception):
    """Base class for all errors raised by the engine."""


class DomainError(EngineError, ValueError):
    """A noise level or probability lies outside its domain."""


class ArgumentError(EngineError, ValueError):
    """Arguments are individually valid but violate a required relation."""


class ValidationError(EngineError, ValueError):
    """Input data is malformed (shapes, ids, normalization)."""


class ImpossibleConditionError(ValidationError):
    """A tabular predictor was conditioned on a zero-probability observation."""


class ConfigurationError(EngineError):
    """Configuration is inconsistent with the data or the requested stage."""


class NumericError(EngineError, ArithmeticError):
    """NaN or Inf appeared in activations, logits or gradients."""


class OracleRefusal(EngineError):
    """An oracle was asked for an instance beyond its size guard."""


class CheckpointError(EngineError):
    """A checkpoint file is truncated or malformed."""
