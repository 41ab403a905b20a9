"""Exception types shared across the package."""


class BoxAttackError(Exception):
    """Base class for every package-specific error."""


class ShapeMismatchError(BoxAttackError, ValueError):
    """Two arrays or images that must agree in shape do not."""


class DegenerateImageError(BoxAttackError, ValueError):
    """A constant (zero-variance) image was passed to a correlation metric."""


class UndefinedMetricError(BoxAttackError, ValueError):
    """A metric has no defined value for the given inputs (e.g. no ground truth)."""


class NotAttackableError(BoxAttackError, ValueError):
    """The clean image produced no detections, so attack success is undefined."""


class NumericError(BoxAttackError, ArithmeticError):
    """A gradient or metric became non-finite during the attack loop."""


class ConfigurationError(BoxAttackError, ValueError):
    """Invalid run configuration: unknown adapter name, bad flag combination, etc."""


class BackendError(BoxAttackError, RuntimeError):
    """A detector backend failed or is unavailable in this installation."""


class CapabilityError(BackendError):
    """The detector backend cannot provide what was asked (e.g. input gradients)."""


class AnnotationParseError(BoxAttackError, ValueError):
    """A dataset annotation file is malformed; the message carries the location."""


class BuildError(BoxAttackError, RuntimeError):
    """Building the reference detector failed to reach its quality target."""


class UnsupportedFormatError(BoxAttackError, ValueError):
    """Refused to write adversarial images to a lossy file format."""
