"""Detector model simulations: propagation, boundary absorption, GRW collapses and soft layers."""
