"""Value types and observables for the detector models."""
