"""Exception types raised across the package."""


class VidAlignError(Exception):
    """Base class for every error raised by vidalign."""


class InputError(VidAlignError, ValueError):
    """An argument has the wrong shape, range or kind."""


class ConfigError(VidAlignError, ValueError):
    """A configuration value is out of its allowed range."""


class FormatError(VidAlignError, ValueError):
    """A file does not follow its binary or text layout."""


class DatasetError(VidAlignError, ValueError):
    """A dataset violates an invariant (missing files, unknown tokens, ...)."""


class BatchError(VidAlignError, ValueError):
    """A batch cannot be used for the in-batch objectives."""


class NonFiniteGradientError(VidAlignError, FloatingPointError):
    """An optimizer step saw a NaN or Inf gradient."""

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name
