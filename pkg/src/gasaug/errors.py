"""Exception hierarchy shared by all toolkit modules."""


class GasAugError(Exception):
    """Base class for every error raised by this package."""


class DataError(GasAugError):
    """Input data violates a documented precondition or file format."""


class TooFewPoints(DataError):
    """Not enough points for the requested geometric operation."""


class DegenerateGeometry(DataError):
    """Input points are (near-)coplanar or collinear; no 3D complex exists."""


class EmptyAlphaComplex(GasAugError):
    """No simplex qualifies at the requested resolution; retry with a larger alpha."""


class NOutOfRange(DataError):
    """Requested sample count outside the supported [100, 1000] range."""


class EmptyMesh(DataError):
    """Mesh has no triangles / zero total area."""


class EmptySource(DataError):
    """Source point cloud is empty."""


class GenerationFailed(GasAugError):
    """Cloud generation did not succeed within the retry budget."""


class EmptyPool(DataError):
    """Gas cloud pool holds no generated clouds."""


class OriginPoint(DataError):
    """Point at the sensor origin has no spherical representation."""


class InvalidLabel(DataError):
    """Ground-truth label carries malformed occlusion or truncation values."""


class NoGroundTruth(DataError):
    """Average precision is undefined without any ground-truth object."""


class MalformedFile(DataError):
    """Binary file size is inconsistent with the declared record layout."""


class ParseError(DataError):
    """Text file line could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
