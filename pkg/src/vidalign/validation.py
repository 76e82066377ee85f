"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from pathlib import Path

from .data.dataset import Dataset, load_manifest
from .errors import ConfigError, InputError


def check_dataset(X) -> Dataset:
    """Accept a loaded :class:`Dataset` or a manifest path / dataset directory."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, (str, Path)):
        return load_manifest(X)
    raise InputError(f"expected a Dataset or a manifest path, got {type(X).__name__}")


def check_positive(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def check_size(size) -> tuple[int, int, int] | None:
    """Parse an output grid ``T,H,W`` (string or sequence)."""
    if size is None:
        return None
    if isinstance(size, str):
        size = size.split(",")
    try:
        out = tuple(int(s) for s in size)
    except ValueError:
        raise InputError(f"size must be three integers T,H,W, got {size!r}") from None
    if len(out) != 3 or min(out) < 1:
        raise InputError(f"size must be three positive integers T,H,W, got {size!r}")
    return out
