"""Avoidability criteria for ball collections and isotropic Levy processes."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
