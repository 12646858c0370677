"""Exception types shared across the package."""


class OpenVocabError(Exception):
    """Base class for all library errors."""


class ConfigError(OpenVocabError):
    """Invalid or unresolvable experiment configuration."""


class DataError(OpenVocabError):
    """Malformed input data or a violated data contract."""


class DivergenceError(OpenVocabError):
    """A numerical computation produced non-finite values."""
