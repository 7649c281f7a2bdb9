"""Seeded synthetic benchmarks, delimited-text datasets, and curve files.

Dataset format: a header line ``d=<int>,output=<none|value|label>`` (with an
optional ``labels=<name;name;...>`` vocabulary for symbolic labels) followed
by one comma-separated row per observation: d coordinates, then the output
column when present.  Floats are written with repr so a read-back is
value-exact.

Curve format: header ``lambda,temperature,metric,codevectors,samples,seconds``
then one row per completed temperature level, in that fixed column order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from .core import CurvePoint

__all__ = [
    "DatasetFormatError",
    "DatasetHeader",
    "MixtureComponent",
    "MixtureSpec",
    "four_gaussians_2d",
    "piecewise_affine_1d",
    "read_curves",
    "read_dataset",
    "sample_mixture",
    "sine_regression_1d",
    "skewed_pair_2d",
    "separable_classes_2d",
    "two_class_2d",
    "two_gaussians_1d",
    "write_curves",
    "write_dataset",
]

CURVE_COLUMNS = "lambda,temperature,metric,codevectors,samples,seconds"


class DatasetFormatError(ValueError):
    """Malformed dataset file; `line` carries the 1-based offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class MixtureComponent:
    mean: np.ndarray
    stddev: np.ndarray  # per-coordinate (diagonal) standard deviations
    weight: float
    label: Optional[int] = None

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.stddev = np.asarray(self.stddev, dtype=float)
        if self.mean.shape != self.stddev.shape:
            raise ValueError("mean and stddev must share a shape")
        if self.weight <= 0:
            raise ValueError("component weights must be positive")


@dataclass
class MixtureSpec:
    """Diagonal Gaussian mixture with an embedded seed."""

    components: list[MixtureComponent]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"component weights must sum to 1, got {total}")
        dims = {c.mean.shape for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")

    @property
    def dim(self) -> int:
        return self.components[0].mean.shape[0]

    @property
    def labelled(self) -> bool:
        return all(c.label is not None for c in self.components)


def sample_mixture(spec: MixtureSpec, n: int) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Draw n i.i.d. samples; same (spec, n) always yields identical arrays.

    Returns (X, labels) with labels None unless every component is
    labelled.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    weights = np.array([c.weight for c in spec.components])
    which = rng.choice(len(spec.components), size=n, p=weights)
    noise = rng.standard_normal((n, spec.dim))
    means = np.array([c.mean for c in spec.components])
    stds = np.array([c.stddev for c in spec.components])
    X = means[which] + noise * stds[which]
    labels = None
    if spec.labelled:
        labels = np.array([spec.components[i].label for i in which], dtype=int)
    return X, labels


def mixture_density(spec: MixtureSpec, points: np.ndarray) -> np.ndarray:
    """Exact density of the mixture at each row of `points` (test oracle)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(points.shape[0])
    for c in spec.components:
        z = (points - c.mean) / c.stddev
        norm = np.prod(c.stddev) * (2 * np.pi) ** (c.mean.shape[0] / 2)
        out += c.weight * np.exp(-0.5 * (z ** 2).sum(axis=1)) / norm
    return out


# -- the desk-scale benchmarks ------------------------------------------------


def four_gaussians_2d(seed: int = 0, spread: float = 0.5) -> MixtureSpec:
    """Four equally weighted isotropic blobs at (+-2, +-2)."""
    comps = [
        MixtureComponent(np.array([sx * 2.0, sy * 2.0]), np.full(2, spread), 0.25)
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    return MixtureSpec(comps, seed=seed)


def two_gaussians_1d(seed: int = 0) -> MixtureSpec:
    """Equal mixture of N(-2, 0.5^2) and N(+2, 0.5^2)."""
    comps = [
        MixtureComponent(np.array([-2.0]), np.array([0.5]), 0.5),
        MixtureComponent(np.array([2.0]), np.array([0.5]), 0.5),
    ]
    return MixtureSpec(comps, seed=seed)


def two_class_2d(seed: int = 0, separation: float = 1.5) -> MixtureSpec:
    """Two overlapping unit-variance classes centred at (-+separation, 0)."""
    comps = [
        MixtureComponent(np.array([-separation, 0.0]), np.ones(2), 0.5, label=0),
        MixtureComponent(np.array([separation, 0.0]), np.ones(2), 0.5, label=1),
    ]
    return MixtureSpec(comps, seed=seed)


def separable_classes_2d(seed: int = 0) -> MixtureSpec:
    """Two tight, far-apart classes (overlap below 1e-8)."""
    comps = [
        MixtureComponent(np.array([-3.0, 0.0]), np.full(2, 0.5), 0.5, label=0),
        MixtureComponent(np.array([3.0, 0.0]), np.full(2, 0.5), 0.5, label=1),
    ]
    return MixtureSpec(comps, seed=seed)


def skewed_pair_2d(seed: int = 0) -> MixtureSpec:
    """80/20 mass split between two blobs, for asynchronous-growth checks."""
    comps = [
        MixtureComponent(np.array([-2.0, 0.0]), np.full(2, 0.5), 0.8),
        MixtureComponent(np.array([2.0, 0.0]), np.full(2, 0.5), 0.2),
    ]
    return MixtureSpec(comps, seed=seed)


def sine_regression_1d(seed: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """x ~ U[0, 2 pi], y = sin(x) (noise-free)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))
    return x, np.sin(x[:, 0])


PIECEWISE_AFFINE_PIECES = ((2.0, 1.0), (-1.0, 3.0))  # (slope, offset) per side


def piecewise_affine_1d(seed: int, n: int,
                        noise: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """x ~ U[-2, 2]; y = 2x + 1 on x < 0, y = -x + 3 on x >= 0."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, 1))
    left = x[:, 0] < 0
    y = np.where(left,
                 PIECEWISE_AFFINE_PIECES[0][0] * x[:, 0] + PIECEWISE_AFFINE_PIECES[0][1],
                 PIECEWISE_AFFINE_PIECES[1][0] * x[:, 0] + PIECEWISE_AFFINE_PIECES[1][1])
    if noise > 0:
        y = y + rng.normal(0.0, noise, size=n)
    return x, y


# -- dataset files -------------------------------------------------------------


@dataclass
class DatasetHeader:
    dim: int
    output: str = "none"  # none | value | label
    label_names: Optional[list[str]] = None

    @property
    def has_output(self) -> bool:
        return self.output != "none"

    def header_line(self) -> str:
        line = f"d={self.dim},output={self.output}"
        if self.label_names:
            line += ",labels=" + ";".join(self.label_names)
        return line


def write_dataset(path, X: np.ndarray, outputs: Optional[np.ndarray] = None,
                  output_kind: str = "none",
                  label_names: Optional[Sequence[str]] = None) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = DatasetHeader(X.shape[1], output_kind,
                           list(label_names) if label_names else None)
    with open(path, "w") as fh:
        fh.write(header.header_line() + "\n")
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if output_kind == "value":
                cells.append(repr(float(outputs[i])))
            elif output_kind == "label":
                cells.append(str(int(outputs[i])))
            fh.write(",".join(cells) + "\n")


def _parse_header(line: str) -> DatasetHeader:
    fields = {}
    for part in line.strip().split(","):
        if "=" not in part:
            raise DatasetFormatError(f"bad header field {part!r}", 1)
        key, value = part.split("=", 1)
        fields[key] = value
    try:
        dim = int(fields["d"])
    except (KeyError, ValueError):
        raise DatasetFormatError("header must declare d=<int>", 1) from None
    output = fields.get("output", "none")
    if output not in ("none", "value", "label"):
        raise DatasetFormatError(f"unknown output kind {output!r}", 1)
    names = fields["labels"].split(";") if "labels" in fields else None
    return DatasetHeader(dim, output, names)


def read_dataset(path) -> tuple[DatasetHeader, np.ndarray, Optional[np.ndarray]]:
    """Parse a dataset file; malformed rows report their line number."""
    with open(path) as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetFormatError("missing header line", 1)
        header = _parse_header(first)
        rows, outputs = [], []
        vocab = {name: i for i, name in enumerate(header.label_names or [])}
        expected = header.dim + (1 if header.has_output else 0)
        lineno = 1
        for line in fh:
            lineno += 1
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != expected:
                raise DatasetFormatError(
                    f"expected {expected} columns, found {len(cells)}", lineno
                )
            try:
                rows.append([float(v) for v in cells[:header.dim]])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), lineno) from None
            if header.output == "value":
                try:
                    outputs.append(float(cells[-1]))
                except ValueError as exc:
                    raise DatasetFormatError(str(exc), lineno) from None
            elif header.output == "label":
                token = cells[-1]
                if token in vocab:
                    outputs.append(vocab[token])
                else:
                    try:
                        outputs.append(int(token))
                    except ValueError:
                        raise DatasetFormatError(
                            f"label {token!r} not in vocabulary", lineno
                        ) from None
        if not rows:
            raise DatasetFormatError("empty data section", 2)
    X = np.array(rows)
    out = None
    if header.output == "value":
        out = np.array(outputs)
    elif header.output == "label":
        out = np.array(outputs, dtype=int)
    return header, X, out


# -- curve files ---------------------------------------------------------------


def write_curves(path, curve_log: Sequence[CurvePoint]) -> None:
    with open(path, "w") as fh:
        fh.write(CURVE_COLUMNS + "\n")
        for point in curve_log:
            fh.write(
                ",".join(
                    repr(float(v)) if isinstance(v, float) else str(v)
                    for v in point.as_row()
                )
                + "\n"
            )


def read_curves(path) -> list[CurvePoint]:
    points = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CURVE_COLUMNS:
            raise DatasetFormatError(f"unexpected curve header {header!r}", 1)
        for lineno, line in enumerate(fh, start=2):
            cells = line.strip().split(",")
            if len(cells) != 6:
                raise DatasetFormatError("curve rows need 6 columns", lineno)
            points.append(
                CurvePoint(
                    float(cells[0]), float(cells[1]), float(cells[2]),
                    int(cells[3]), int(cells[4]), float(cells[5]),
                )
            )
    return points
