"""Single-view textured human reconstruction with an implicit field and a body prior."""

__version__ = "0.1.0"
