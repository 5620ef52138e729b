"""dynlf: dynamic light-field rendering at desk scale.

A ray-to-color regressor with non-bending ray deformation and hyperspace
lifting, its controllable extension, and the knowledge-distillation pipeline
that trains both from a slow integration-based teacher over analytic scenes.
"""

__version__ = "0.1.0"
