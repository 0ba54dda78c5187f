"""Structure-preserving P2 finite elements for viscoelastic phase separation.

Modules: ``mesh`` (periodic triangulations), ``fem`` (P2 spaces and linear
algebra), ``model`` (coefficient laws and functionals), ``stepper`` (slab
solver), ``analysis`` (refinement errors and structure checks), ``cli_io``
(configuration and export) and ``plotting``.
"""

__version__ = "0.1.0"
