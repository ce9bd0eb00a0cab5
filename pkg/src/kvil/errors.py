"""Exception taxonomy for the kvil pipeline.

Every stage raises a subclass of KvilError so CLI entry points can turn any
pipeline failure into a diagnostic plus nonzero exit code.
"""


class KvilError(Exception):
    """Base class for all kvil errors."""


class DegenerateGeometry(KvilError):
    """Point set is collinear or coincident; a rigid transform is not unique."""


class EmptySequence(KvilError):
    """A per-demo sequence has fewer than two samples."""


class ParseError(KvilError):
    """File is not valid JSON or lacks the required top-level structure."""


class SchemaError(KvilError):
    """File parses but violates the demonstration schema."""


class UnitError(KvilError):
    """Non-finite coordinate values in input data."""


class DegenerateObject(KvilError):
    """All candidates of an object coincide; spatial scale is zero."""


class InsufficientCandidates(KvilError):
    """Fewer candidates than a frame neighborhood requires."""


class MissingCorrespondence(KvilError):
    """An observation lacks descriptor IDs needed by a frame bank."""


class NotOneShot(KvilError):
    """One-shot extraction called with more than one demonstration."""


class FitDiverged(KvilError):
    """Manifold fitting alternation stopped making progress."""


class InsufficientData(KvilError):
    """Too few points for the requested manifold dimension."""


class OutOfChart(KvilError):
    """Manifold parameter outside the inflated fitting hull."""


class RankDeficient(KvilError):
    """Regression design matrix singular beyond ridge repair."""


class InsufficientTargets(KvilError):
    """Density estimation needs at least two demonstrated targets."""


class DegenerateRadius(KvilError):
    """Priority sphere radius is numerically zero."""


class NumericalBlowup(KvilError):
    """Simulation state norm exceeded the stability bound."""


class SpecIncompatible(KvilError):
    """Synthetic task parameters violate a constraint-kind demo-count gate."""
