"""Exception hierarchy. Every error carries a short category used as the CLI message prefix."""


class MHCLError(Exception):
    category = "error"


class ShapeError(MHCLError, ValueError):
    category = "shape"


class DomainError(MHCLError, ValueError):
    category = "domain"


class ContractError(MHCLError, ValueError):
    category = "contract"


class ParseError(MHCLError, ValueError):
    category = "parse"


class ValidationError(MHCLError, ValueError):
    category = "validation"


class ConfigError(MHCLError, ValueError):
    category = "config"


class FormatError(MHCLError, ValueError):
    category = "format"


class CorruptionError(MHCLError, ValueError):
    category = "corruption"


class DivergenceError(MHCLError, RuntimeError):
    category = "divergence"
