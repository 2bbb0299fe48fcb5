"""Exception types shared across the package."""


class MeshConstructionError(Exception):
    """A mesh generator produced an invalid (e.g. degenerate) mesh."""


class DegenerateTetError(Exception):
    """A tetrahedron is too close to flat for circumcenter computations."""


class NegativeMeasureError(Exception):
    """A dual measure came out negative: the circumcentric dual is inverted."""


class NumericalBreakdownError(Exception):
    """A Krylov solve hit a NaN/Inf and cannot continue."""


class SingularMatrixError(Exception):
    """Direct factorization met a pivot below the singularity threshold."""
