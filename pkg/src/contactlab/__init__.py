"""Contact process on perturbed graphs: simulation, couplings, exact oracle, estimators."""

__version__ = "0.1.0"
