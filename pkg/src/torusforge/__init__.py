"""torusforge: torus bifurcation analysis for perturbed Hopf-Zero polynomial
vector fields in R^3 (explicit criteria, second-order averaging, Poincare-map
certification, and the degree-lift construction)."""

__version__ = "0.1.0"
