"""Persistence of experiment results."""
