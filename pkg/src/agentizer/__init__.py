"""Turn a code repository into a validated, self-describing agent."""

__version__ = "0.1.0"
