"""Numerical laboratory for sparse bounds of singular and maximal Radon transforms on periodic grids."""

from .errors import GridError, GuardError, LatticeError
from .lattice import GridFunction, GridSpec, make_grid, pairing, convolve
from .measures import DiscreteMeasure, circle_measure, dilate, estimate_decay
from .operators import EpsilonSigns, ExponentPair, radon_T, maximal_T_star

__version__ = "0.1.0"
