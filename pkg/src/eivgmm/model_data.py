"""Data containers and CSV ingestion for the replicate-based heteroscedastic EIV model.

The observed sample consists of an outcome ``y_j``, error-free covariates
``z_j`` (with a synthesized intercept), and ``n_j >= 2`` replicate surrogate
measurements of the error-prone covariates. Replicate counts may vary across
observations, so the replicate block is stored as a ragged list.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from .errors import CsvParseError, ValidationError

__all__ = [
    "ParamVector",
    "Dataset",
    "AveragedDesign",
    "RegressionDesign",
    "CsvSchema",
    "make_dataset",
    "average_replicates",
    "build_design",
    "load_csv",
    "write_csv",
]


@dataclass(frozen=True)
class ParamVector:
    """Coefficient vector split into the error-prone block ``beta`` (length p)
    and the error-free block ``gamma`` (length q+1, ``gamma[0]`` is the intercept)."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.gamma))):
            raise ValidationError("parameter vector contains non-finite entries")

    @property
    def theta(self) -> np.ndarray:
        """Flat parameter vector ordered [beta, gamma]."""
        return np.concatenate([self.beta, self.gamma])

    @classmethod
    def from_theta(cls, theta, p: int) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        return cls(beta=theta[:p], gamma=theta[p:])

    def __len__(self):
        return self.beta.size + self.gamma.size


def as_theta(theta_like, p: int | None = None) -> np.ndarray:
    """Coerce a ParamVector or array-like to a flat [beta, gamma] vector."""
    if isinstance(theta_like, ParamVector):
        return theta_like.theta
    return np.asarray(theta_like, dtype=float)


@dataclass(frozen=True)
class Dataset:
    """Immutable observed sample.

    Attributes
    ----------
    y : (n,) outcomes.
    z : (n, q+1) error-free design, first column identically one.
    w_reps : list of n arrays, each (n_j, p), the replicate surrogates.
    n, p, q : dimensions.
    """

    y: np.ndarray
    z: np.ndarray
    w_reps: list
    n: int
    p: int
    q: int

    @property
    def n_rep(self) -> np.ndarray:
        """Replicate counts n_j, shape (n,)."""
        return np.array([w.shape[0] for w in self.w_reps], dtype=int)

    def replicate_stack(self):
        """(n, r, p) stacked replicates if all n_j are equal, else None."""
        counts = self.n_rep
        if np.all(counts == counts[0]):
            return np.stack(self.w_reps)
        return None


def make_dataset(y, z, w_reps) -> Dataset:
    """Build and validate a Dataset.

    Parameters
    ----------
    y : (n,) outcomes.
    z : (n, q) error-free covariates WITHOUT the intercept column (q may be 0).
    w_reps : sequence of n arrays of shape (n_j, p).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    z = np.asarray(z, dtype=float).reshape(n, -1) if np.size(z) else np.empty((n, 0))
    q = z.shape[1]
    w_list = [np.atleast_2d(np.asarray(w, dtype=float)) for w in w_reps]
    if len(w_list) != n:
        raise ValidationError(f"got {len(w_list)} replicate blocks for {n} outcomes")
    p = w_list[0].shape[1]
    for j, w in enumerate(w_list):
        if w.shape[1] != p:
            raise ValidationError(f"row {j}: replicate block has {w.shape[1]} columns, expected {p}")
    bad = [j for j, w in enumerate(w_list) if w.shape[0] < 2]
    if bad:
        raise ValidationError(f"n_j<2: rows {bad} have fewer than 2 complete replicates")
    full_z = np.column_stack([np.ones(n), z])
    if not np.all(np.isfinite(y)):
        raise ValidationError("non-finite outcome values")
    if not np.all(np.isfinite(full_z)):
        raise ValidationError("non-finite error-free covariate values")
    for j, w in enumerate(w_list):
        if not np.all(np.isfinite(w)):
            raise ValidationError(f"row {j}: non-finite replicate values")
    if n < p + q + 2:
        raise ValidationError(f"need n >= p+q+2 = {p + q + 2}, got n = {n}")
    for arr in (y, full_z, *w_list):
        arr.setflags(write=False)
    return Dataset(y=y, z=full_z, w_reps=w_list, n=n, p=p, q=q)


@dataclass(frozen=True)
class AveragedDesign:
    """Per-observation replicate means and counts."""

    w_bar: np.ndarray  # (n, p)
    n_rep: np.ndarray  # (n,)


def average_replicates(d: Dataset) -> AveragedDesign:
    """Average the replicate surrogates for each observation."""
    w_bar = np.array([w.mean(axis=0) for w in d.w_reps])
    return AveragedDesign(w_bar=w_bar, n_rep=d.n_rep)


@dataclass(frozen=True)
class RegressionDesign:
    """Combined regression design ``v = [w_bar | z]`` with the (p, q) split."""

    v: np.ndarray  # (n, p+q+1)
    p: int
    q: int

    @property
    def k(self) -> int:
        return self.p + self.q + 1


def build_design(d: Dataset, avg: AveragedDesign | None = None) -> RegressionDesign:
    if avg is None:
        avg = average_replicates(d)
    v = np.column_stack([avg.w_bar, d.z])
    return RegressionDesign(v=v, p=d.p, q=d.q)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for the wide CSV layout.

    Replicate columns are named ``{w_prefix}{k}_r{r}`` for covariate k = 1..p and
    replicate r = 1..R; p and R are inferred from the header. Empty replicate
    cells mark missing replicates; a replicate vector counts only if all p of
    its cells are present.
    """

    y: str
    z: tuple = ()
    w_prefix: str = "w"


def _parse_cell(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise CsvParseError(
            f"row {row}, column '{column}': cannot parse {text!r} as a number",
            row=row,
            column=column,
        ) from None


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Load a wide-format CSV file into a Dataset.

    Raises CsvParseError for malformed numeric cells and ValidationError for
    schema problems or rows with fewer than 2 complete replicate vectors.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    if schema.y not in header:
        raise ValidationError(f"outcome column '{schema.y}' not in header {header}")
    for name in schema.z:
        if name not in header:
            raise ValidationError(f"error-free column '{name}' not in header {header}")

    pat = re.compile(rf"^{re.escape(schema.w_prefix)}(\d+)_r(\d+)$")
    rep_cols = {}
    for name in header:
        m = pat.match(name)
        if m:
            rep_cols[(int(m.group(1)), int(m.group(2)))] = name
    if not rep_cols:
        raise ValidationError(
            f"no replicate columns matching '{schema.w_prefix}<k>_r<r>' in header {header}"
        )
    p = max(k for k, _ in rep_cols)
    n_rep_cols = max(r for _, r in rep_cols)
    missing = [(k, r) for k in range(1, p + 1) for r in range(1, n_rep_cols + 1)
               if (k, r) not in rep_cols]
    if missing:
        raise ValidationError(f"incomplete replicate column grid; missing {missing}")
    if n_rep_cols < 2:
        raise ValidationError("n_j<2: schema provides a single replicate column per covariate")

    y, z, w_reps = [], [], []
    short_rows = []
    for i, row in enumerate(rows):
        y.append(_parse_cell(row[schema.y], i, schema.y))
        z.append([_parse_cell(row[name], i, name) for name in schema.z])
        reps = []
        for r in range(1, n_rep_cols + 1):
            cells = [row[rep_cols[(k, r)]] for k in range(1, p + 1)]
            if all(c is not None and c.strip() != "" for c in cells):
                reps.append([_parse_cell(c, i, rep_cols[(k + 1, r)])
                             for k, c in enumerate(cells)])
        if len(reps) < 2:
            short_rows.append(i)
        w_reps.append(np.array(reps, dtype=float).reshape(len(reps), p))
    if short_rows:
        raise ValidationError(
            f"n_j<2: rows {short_rows} have fewer than 2 complete replicate vectors"
        )
    return make_dataset(np.array(y), np.array(z).reshape(len(y), len(schema.z)), w_reps)


def write_csv(d: Dataset, path, schema: CsvSchema | None = None) -> None:
    """Write a Dataset in the wide CSV layout read by load_csv.

    Floats are written with repr so a load_csv round trip is bit-identical.
    The intercept column is never written.
    """
    if schema is None:
        schema = CsvSchema(y="y", z=tuple(f"z{i + 1}" for i in range(d.q)))
    r_max = int(d.n_rep.max())
    header = [schema.y, *schema.z]
    header += [f"{schema.w_prefix}{k}_r{r}" for r in range(1, r_max + 1)
               for k in range(1, d.p + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(d.n):
            row = [repr(float(d.y[j]))]
            row += [repr(float(v)) for v in d.z[j, 1:]]
            w = d.w_reps[j]
            for r in range(r_max):
                if r < w.shape[0]:
                    row += [repr(float(v)) for v in w[r]]
                else:
                    row += [""] * d.p
            writer.writerow(row)
