"""Lattice Boltzmann diffusion schemes on triangular lattices.

Modules: ``mesh`` (lattices), ``basis`` (moment matrices), ``scheme``
(collide and stream), ``analysis`` (plane-wave dispersion), ``spectral``
(Arnoldi eigen-analysis) and ``harness`` (experiments and refinement).
"""

__version__ = "0.1.0"
