"""Moderate-deviation error probabilities in the Gaussian white noise model.

Modules: ``model`` (signal families, Fisher information, regularity audit),
``simulate`` (paths and statistics), ``geometry`` (convex bodies),
``infer`` (tests and estimators), ``mdp`` (rare-event Monte Carlo),
``bounds`` (normal tails and the bound formulas), ``cli`` (experiments).
"""

__version__ = "0.1.0"
