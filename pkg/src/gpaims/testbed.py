"""Test simulators, Latin hypercube designs and CSV dataset ingestion."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .gp import InvalidArgumentError, TrainingSet

log = logging.getLogger(__name__)


def branin_modified(x):
    """Branin function rescaled to the unit square, with an extra ``5 * x1_bar`` term."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        log.warning("branin_modified evaluated outside the unit square at %s", x)
    x1 = 15.0 * x[..., 0] - 5.0
    x2 = 15.0 * x[..., 1]
    a = x2 - 5.1 / (4.0 * math.pi**2) * x1**2 + 5.0 / math.pi * x1 - 6.0
    return a**2 + 10.0 * ((1.0 - 1.0 / (8.0 * math.pi)) * np.cos(x1) + 1.0) + 5.0 * x1


def model_2d(x, denominator="verbatim"):
    """Two-input test model.

    ``denominator="verbatim"`` uses ``100 x1^2 + 500 x1^2 + 4 x1 + 20`` as
    the default; ``"cubic"`` uses ``100 x1^3 + 500 x1^2 + 4 x1 + 20``.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    if np.any(x2 == 0):
        raise InvalidArgumentError("model_2d is undefined at x2 = 0")
    num = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    if denominator == "verbatim":
        den = 100.0 * x1**2 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    elif denominator == "cubic":
        den = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    else:
        raise InvalidArgumentError(f"denominator must be 'verbatim' or 'cubic', got {denominator!r}")
    return -np.expm1(-0.5 / x2) * num / den


def toy_1d(x):
    return 5.0 + x + np.cos(x) + 0.5 * np.sin(3.0 * x)


def latin_hypercube(n, p, rng):
    """``n`` points in ``[0, 1)^p`` with exactly one point per stratum in each dimension."""
    if n < 1 or p < 1:
        raise InvalidArgumentError("latin_hypercube needs n >= 1 and p >= 1")
    strata = np.column_stack([rng.permutation(n) for _ in range(p)])
    X = (strata + rng.uniform(size=(n, p))) / n
    # guard against (j + u) / n rounding up to the next stratum
    return np.minimum(X, np.nextafter((strata + 1) / n, 0.0))


@dataclass
class Dataset:
    """Named inputs/outputs with the affine map applied to the raw inputs, if any.

    ``scale_offset`` and ``scale_width`` map raw inputs ``u`` to
    ``(u - offset) / width``.
    """

    name: str
    inputs: np.ndarray
    outputs: np.ndarray
    provenance: str = "builtin"
    scale_offset: np.ndarray = None
    scale_width: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise InvalidArgumentError("inputs and outputs have different lengths")
        if len(np.unique(self.inputs, axis=0)) != self.inputs.shape[0]:
            raise InvalidArgumentError(f"dataset {self.name!r} has duplicate input rows")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def p(self):
        return self.inputs.shape[1]

    def training_set(self):
        return TrainingSet(self.inputs, self.outputs)

    def transform_inputs(self, U):
        """Apply the recorded input rescaling to raw inputs ``U``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.scale_offset is None:
            return U
        return (U - self.scale_offset) / self.scale_width

    def inverse_transform_inputs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.scale_offset is None:
            return X
        return X * self.scale_width + self.scale_offset

    def rescaled(self):
        """Min-max rescale the inputs to ``[0, 1]^p``, composing with any existing map."""
        lo = self.inputs.min(axis=0)
        width = self.inputs.max(axis=0) - lo
        width = np.where(width > 0, width, 1.0)
        X = (self.inputs - lo) / width
        if self.scale_offset is None:
            offset, total = lo, width
        else:
            offset = self.scale_offset + lo * self.scale_width
            total = self.scale_width * width
        return Dataset(self.name, X, self.outputs, self.provenance, offset, total, dict(self.meta))


class DatasetFormatError(ValueError):
    pass


def load_dataset(path, format="csv", rescale=False):
    """Read a CSV file with header ``x1, ..., xp, y``.

    Errors name the offending (1-based) line of the file.
    """
    if format != "csv":
        raise InvalidArgumentError(f"unsupported dataset format {format!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        p = len(header) - 1
        if p < 1 or header[:p] != [f"x{i + 1}" for i in range(p)] or header[-1] != "y":
            raise DatasetFormatError(f"{path}: line 1: expected header x1,...,xp,y, got {header}")
        rows, seen = [], {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 1:
                raise DatasetFormatError(
                    f"{path}: line {line}: expected {p + 1} fields, got {len(row)}"
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise DatasetFormatError(f"{path}: line {line}: non-numeric field in {row}") from None
            if not all(math.isfinite(v) for v in values):
                raise DatasetFormatError(f"{path}: line {line}: non-finite value")
            key = tuple(values[:p])
            if key in seen:
                raise DatasetFormatError(
                    f"{path}: line {line}: duplicate inputs (first seen on line {seen[key]})"
                )
            seen[key] = line
            rows.append(values)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    data = np.array(rows)
    ds = Dataset(str(path), data[:, :p], data[:, p], provenance=str(path))
    return ds.rescaled() if rescale else ds


def write_dataset(path, inputs, outputs):
    inputs = np.atleast_2d(inputs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(inputs.shape[1])] + ["y"])
        for x, y in zip(inputs, outputs):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


# name -> (input dimension, default design size)
TOY_RANGE = 10.0


def _toy_unit(X):
    return toy_1d(TOY_RANGE * X[:, 0])


BUILTINS = {
    "branin": (2, 18),
    "model2d": (2, 20),
    "toy1d": (1, 8),
}


def simulator(name, denominator="verbatim"):
    """Vectorized simulator on the unit hypercube for a builtin dataset name."""
    if name == "branin":
        return branin_modified
    if name == "model2d":
        return lambda X: model_2d(X, denominator)
    if name == "toy1d":
        return _toy_unit
    raise InvalidArgumentError(f"unknown builtin dataset {name!r}")


def builtin_dataset(name, rng, n=None, denominator="verbatim"):
    """Latin hypercube design of a builtin simulator, evaluated at the design."""
    if name not in BUILTINS:
        raise InvalidArgumentError(f"unknown builtin dataset {name!r}; choose from {sorted(BUILTINS)}")
    p, default_n = BUILTINS[name]
    n = default_n if n is None else n
    X = latin_hypercube(n, p, rng)
    y = simulator(name, denominator)(X)
    return Dataset(name, X, y, meta={"denominator": denominator} if name == "model2d" else {})


def resolve_dataset(ref, rng, n=None, denominator="verbatim", rescale=False):
    """``"branin" | "model2d" | "toy1d" | "file:<path>"``."""
    if ref.startswith("file:"):
        return load_dataset(ref[len("file:"):], rescale=rescale)
    return builtin_dataset(ref, rng, n=n, denominator=denominator)
