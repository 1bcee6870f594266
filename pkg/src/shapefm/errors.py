"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or data structure violates a documented precondition."""


class ParseError(ValueError):
    """A text input (TSV line, CSV row) could not be parsed."""
