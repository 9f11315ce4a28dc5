"""Declarative detector experiments: configuration, model dispatch and runs."""

__version__ = '0.3.0'
