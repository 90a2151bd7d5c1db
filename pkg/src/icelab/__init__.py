"""icelab: simulation laboratory for the uniform six-vertex height function.

Exact and Monte Carlo tools for the height representation of square ice
on even domains of Z²: domain geometry, Lipschitz height fields and
their arrow encoding, heat-bath Glauber dynamics with monotone
coupling-from-the-past, level-loop extraction, scale-by-scale
conditional-mean profiles, and the statistical checks used by the
bundled experiments.
"""

__version__ = "0.1.0"
