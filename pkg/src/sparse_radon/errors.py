"""Exception types shared across the package."""


class GridError(ValueError):
    """Invalid grid parameters or mismatched grids."""


class GuardError(ValueError):
    """A resolution or padding guard was violated."""


class LatticeError(ValueError):
    """A measure atom does not sit on the lattice of the grid."""
