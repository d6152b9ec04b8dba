"""Exception hierarchy for mesh ingestion, partitioning and pipeline control."""


class VolpartError(Exception):
    """Base class for all package errors."""


# --- input / format errors -------------------------------------------------

class ParseError(VolpartError):
    """Malformed mesh file."""


class FormatError(ParseError):
    """Structurally invalid tet-mesh file (bad counts, dangling indices)."""


class UnlabeledFace(ParseError):
    """Surface face with no attribute assignment."""


class NonManifoldInput(VolpartError):
    """Input surface violates the closed 2-manifold requirement."""


class NonManifoldEdge(NonManifoldInput):
    """Edge bounded by a number of faces different from 2."""


class OpenBoundary(NonManifoldInput):
    """Surface has a boundary edge (not closed)."""


class BoundaryMismatch(VolpartError):
    """Tet mesh boundary does not coincide with the surface mesh."""


class InvertedTet(VolpartError):
    """Tetrahedron with non-positive signed volume."""


class OpenPartBoundary(VolpartError):
    """Emitted part mesh failed the closedness check (upstream bug)."""


# --- solver errors ----------------------------------------------------------

class NoFeasibleDirection(VolpartError):
    """Robust-direction query on an all-infeasible mask."""


class InfeasibleConstraints(VolpartError):
    """A tet has no finite-cost label (conflicting seed constraints)."""


class SingularSystem(VolpartError):
    """Quadratic solve hit a singular matrix (disconnected free vertex)."""


# --- segmentation refinement ------------------------------------------------

class NoValidPair(VolpartError):
    """No direction pair covers the region to split."""


class GrowthStalled(VolpartError):
    """Sub-region growth exhausted its frontier with faces unassigned."""


class Disconnected(VolpartError):
    """A grown sub-region is not edge-connected."""


class SplitFailed(VolpartError):
    """Region splitting exhausted the direction-set capacity."""


# --- linking / pipeline -----------------------------------------------------

class NoPath(VolpartError):
    """Unaffiliated dual-graph connectivity insufficient to link regions."""


class InvertedResidualTet(VolpartError):
    """Interface deformation inverted a residual tet and untangling failed."""


class PipelineStalled(VolpartError):
    """Sequential extraction and region splitting both failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
