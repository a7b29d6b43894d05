"""Compositional datasets with a block of structural zeros.

A dataset is split in two blocks. The ``Y`` block holds the observations
whose last ``q`` parts are structural zeros; only their ``D - q`` positive
parts are stored. The ``Z`` block holds the complete compositions.
"""

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simplex
from .errors import (
    EmptyBlock,
    InconsistentZeroPattern,
    NegativeEntry,
    ParseError,
    TooFewRows,
)

#: a row whose raw sum is further than this from 1 is reported as re-closed
CLOSURE_WARN_TOL = 1e-6
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class CompositionalDataset:
    y_rows: np.ndarray
    z_rows: np.ndarray
    q: int
    part_names: tuple
    provenance: str = ""
    warnings: tuple = ()

    def __post_init__(self):
        y = np.array(self.y_rows, dtype=float)
        z = np.array(self.z_rows, dtype=float)
        d = len(self.part_names)
        if z.ndim != 2 or z.shape[1] != d:
            raise ValueError(f"z_rows must have {d} columns")
        if y.ndim != 2 or y.shape[1] != d - self.q:
            raise ValueError(f"y_rows must have {d - self.q} columns")
        if not 0 <= self.q <= d - 2:
            raise InconsistentZeroPattern(
                f"q = {self.q} structural zeros leave fewer than 2 positive parts out of {d}")
        if z.shape[0] == 0:
            raise EmptyBlock("the block of complete compositions is empty")
        if z.shape[0] < 2:
            raise TooFewRows("at least 2 complete compositions are required")
        if self.q >= 1:
            if y.shape[0] == 0:
                raise EmptyBlock("the block with structural zeros is empty")
            if y.shape[0] < 2:
                raise TooFewRows("at least 2 compositions with structural zeros are required")
        for block in (y, z):
            if block.size and (np.any(block <= 0) or not np.all(np.isfinite(block))):
                raise ValueError("stored parts must be finite and strictly positive")
            if block.size and np.max(np.abs(block.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
                raise ValueError("every stored row must sum to 1")
        y.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "y_rows", y)
        object.__setattr__(self, "z_rows", z)
        object.__setattr__(self, "part_names", tuple(self.part_names))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def d(self):
        return len(self.part_names)

    @property
    def n_y(self):
        return self.y_rows.shape[0]

    @property
    def n_z(self):
        return self.z_rows.shape[0]

    def full_matrix(self):
        """All rows with the zero parts written out, ``Y`` block first."""
        padded = np.hstack([self.y_rows, np.zeros((self.n_y, self.q))])
        return np.vstack([padded, self.z_rows])


@dataclass(frozen=True)
class IlrDatasets:
    """Pivot coordinates of both blocks.

    ``y_tilde`` has ``D - q - 1`` columns and ``z_tilde`` has ``D - 1``.
    """

    y_tilde: np.ndarray
    z_tilde: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_tilde, dtype=float)
        z = np.asarray(self.z_tilde, dtype=float)
        if y.ndim != 2 or z.ndim != 2:
            raise ValueError("ilr blocks must be 2-D")
        if y.shape[1] > z.shape[1]:
            raise ValueError("the structural-zero block cannot have more coordinates")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise ValueError("ilr coordinates must be finite")
        object.__setattr__(self, "y_tilde", y)
        object.__setattr__(self, "z_tilde", z)

    @property
    def n_y(self):
        return self.y_tilde.shape[0]

    @property
    def n_z(self):
        return self.z_tilde.shape[0]

    @property
    def p_y(self):
        return self.y_tilde.shape[1]

    @property
    def p(self):
        return self.z_tilde.shape[1]

    @property
    def q(self):
        return self.p - self.p_y


_DIRECTIVE = re.compile(r"^#\s*(q|n_y)\s*=\s*(\d+)\s*$")


def _read_directives(text):
    found = {}
    for ln in text.splitlines():
        m = _DIRECTIVE.match(ln.strip())
        if m:
            found[m.group(1)] = int(m.group(2))
    return found


def _read_table(text, source):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError(f"{source}: no header row")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    if len(header) < 2 or any(not h for h in header):
        raise ParseError(f"{source}: header needs at least two non-empty part names")
    if len(set(header)) != len(header):
        raise ParseError(f"{source}: duplicate part names in header")
    body = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ParseError(f"{source}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            values = [float(cell) for cell in row]
        except ValueError as exc:
            raise ParseError(f"{source}: row {lineno}: {exc}") from exc
        body.append(values)
    if not body:
        raise ParseError(f"{source}: no data rows")
    data = np.array(body)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{source}: non-finite entries")
    return header, data


def _resolve_zero_parts(zero_parts, header):
    resolved = []
    for item in zero_parts:
        if isinstance(item, str) and item in header:
            resolved.append(header.index(item))
        else:
            try:
                idx = int(item)
            except (TypeError, ValueError):
                raise ParseError(f"unknown part {item!r}") from None
            if not 0 <= idx < len(header):
                raise ParseError(f"part index {idx} out of range")
            resolved.append(idx)
    return sorted(set(resolved))


def split_table(header, data, zero_parts=None, provenance="", n_y_without_zeros=0):
    """Build a dataset from a raw table with zeros written out.

    The structural-zero set is every column holding a zero somewhere, unless
    ``zero_parts`` (names or column indices) declares it. Each row must be
    zero on the whole set or on none of it. Rows are closed to 1; the
    structural-zero rows are closed on their positive parts only.

    When no structural zeros exist, the first ``n_y_without_zeros`` rows
    form the ``Y`` block (the degenerate ``q = 0`` layout).
    """
    data = np.asarray(data, dtype=float)
    if np.any(data < 0):
        raise NegativeEntry(f"{provenance or 'table'}: negative entries")
    is_zero = data == 0
    if zero_parts is None:
        zero_cols = np.flatnonzero(is_zero.any(axis=0)).tolist()
    else:
        zero_cols = _resolve_zero_parts(zero_parts, list(header))
    zero_mask = np.zeros(len(header), dtype=bool)
    zero_mask[zero_cols] = True

    in_y = np.zeros(data.shape[0], dtype=bool)
    for r, row_zero in enumerate(is_zero):
        if np.any(row_zero & ~zero_mask):
            raise InconsistentZeroPattern(f"row {r + 1} has zeros outside the structural-zero parts")
        if row_zero.any():
            if not np.array_equal(row_zero, zero_mask):
                raise InconsistentZeroPattern(
                    f"row {r + 1} is zero on only some of the structural-zero parts")
            in_y[r] = True

    q = int(zero_mask.sum())
    if q == 0 and n_y_without_zeros:
        in_y[:n_y_without_zeros] = True
    if q > len(header) - 2:
        raise InconsistentZeroPattern("structural zeros must leave at least 2 positive parts")
    keep = np.flatnonzero(~zero_mask)
    order = np.concatenate([keep, np.flatnonzero(zero_mask)])
    names = tuple(header[i] for i in order)

    y_raw = data[in_y][:, keep]
    z_raw = data[~in_y]
    if z_raw.shape[0] == 0:
        raise EmptyBlock("no complete compositions")
    if q >= 1 and y_raw.shape[0] == 0:
        raise EmptyBlock("no rows carry the declared structural zeros")
    warnings = []
    sums = np.concatenate([y_raw.sum(axis=1), z_raw.sum(axis=1)])
    if np.any(np.abs(sums - 1.0) > CLOSURE_WARN_TOL):
        warnings.append("rows did not sum to 1 and were closed (raw counts?)")
    y_rows = simplex.closure(y_raw) if y_raw.shape[0] else np.empty((0, len(keep)))
    z_rows = simplex.closure(z_raw)
    return CompositionalDataset(
        y_rows=y_rows,
        z_rows=z_rows[:, order],
        q=q,
        part_names=names,
        provenance=provenance,
        warnings=tuple(warnings),
    )


def load_csv(path, zero_parts=None):
    """Read a compositional CSV file into a :class:`CompositionalDataset`.

    Parameters
    ----------
    path : str or Path
        UTF-8, comma separated, header row of part names, one observation
        per row. Lines starting with ``#`` are ignored.
    zero_parts : sequence of str or int, optional
        Explicit structural-zero parts. By default they are detected from
        the zero pattern.

    Comment lines ``# q=<Q>`` and ``# n_y=<N>`` written by :func:`write_csv`
    are honoured: with ``q = 0`` the first ``N`` rows form the block that
    would carry the structural zeros.

    Raises
    ------
    ParseError, NegativeEntry, InconsistentZeroPattern, EmptyBlock
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    header, data = _read_table(text, str(path))
    directives = _read_directives(text)
    n_y = directives.get("n_y", 0) if directives.get("q") == 0 else 0
    if n_y > data.shape[0]:
        raise ParseError(f"{path}: n_y={n_y} exceeds the number of rows")
    return split_table(header, data, zero_parts=zero_parts, provenance=str(path),
                       n_y_without_zeros=n_y)


def to_csv_text(ds):
    buf = io.StringIO()
    buf.write(f"# q={ds.q}\n# n_y={ds.n_y}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ds.part_names)
    for row in ds.full_matrix():
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_csv(ds, path):
    """Write ``ds`` with the structural-zero parts last.

    Two comment lines record ``q`` and ``n_y``; the ``Y`` rows come first with
    their zero parts written out.
    """
    Path(path).write_text(to_csv_text(ds), encoding="utf-8")


def ilr_transform_split(ds):
    """Pivot coordinates of each block, each in its own simplex."""
    p_y = ds.d - ds.q - 1
    y_tilde = simplex.ilr(ds.y_rows) if ds.n_y else np.empty((0, p_y))
    return IlrDatasets(y_tilde=y_tilde, z_tilde=simplex.ilr(ds.z_rows))


def from_ilr(y_tilde, z_tilde, part_names=None, provenance="ilr"):
    """Compositional dataset whose pivot coordinates are the given blocks."""
    y_tilde = np.asarray(y_tilde, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    d = z_tilde.shape[1] + 1
    q = z_tilde.shape[1] - y_tilde.shape[1]
    if part_names is None:
        part_names = tuple(f"part{i + 1}" for i in range(d))
    y_rows = simplex.ilr_inv(y_tilde) if y_tilde.shape[0] else np.empty((0, d - q))
    return CompositionalDataset(
        y_rows=y_rows,
        z_rows=simplex.ilr_inv(z_tilde),
        q=q,
        part_names=tuple(part_names),
        provenance=provenance,
    )
