"""Exception and warning types shared across the package."""


class MrcdeError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(MrcdeError):
    """Dataset or config violates its schema (lengths, finiteness, labels, keys)."""


class EmptyStratum(MrcdeError):
    """A treatment or treatment-mediator stratum required by the target is empty."""


class UnknownVariable(MrcdeError):
    """A design term references a variable the dataset does not provide."""


class RankDeficient(MrcdeError):
    """Least-squares design is numerically rank deficient."""


class Separation(MrcdeError):
    """Logistic coefficients ran away during iteration (quasi-separation)."""


class NotConverged(MrcdeError):
    """Iterative fit stopped without meeting the score tolerance."""


class DimensionMismatch(MrcdeError):
    """Prediction design width differs from the fitted coefficient length."""


class VariantMismatch(MrcdeError):
    """Estimator requires a different second-stage pseudo-outcome variant."""


class MissingEif(MrcdeError):
    """Influence-function contrast requested from results that carry no EIF values."""


class LengthMismatch(MrcdeError):
    """Per-unit vectors from different results have different lengths."""


class FoldTooSmall(MrcdeError):
    """A cross-fitting training fold cannot support the required fits."""


class ZeroCell(MrcdeError):
    """Discrete-population oracle needs a conditional probability that is zero."""


class BootstrapFailure(MrcdeError):
    """Too many bootstrap replicates were skipped or failed."""


class TruncationDominates(UserWarning):
    """More than the expected share of fitted probabilities hit the truncation bound."""
