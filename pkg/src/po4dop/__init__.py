"""PO4-DOP marine phosphorus model: finite-volume forward solver, Picard
iteration, tangent-linear sensitivities, Galerkin oracle and parameter
identification."""
__version__ = "0.1.0"
