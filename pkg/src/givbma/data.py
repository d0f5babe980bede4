"""Observed-data containers, CSV ingestion, and preprocessing.

A :class:`Dataset` holds the outcome vector, the treatment matrix, and the
pool of candidate instruments/covariates, together with per-column
distribution family tags and the optional fixed-instrument mask (columns
restricted to the treatment equation).  All containers are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

GAUSSIAN = "gaussian"
POISSON_LOG_NORMAL = "poisson-log-normal"
BETA_LOGISTIC = "beta-logistic"
FAMILIES = (GAUSSIAN, POISSON_LOG_NORMAL, BETA_LOGISTIC)


class DataError(ValueError):
    """Raised for malformed input data or schema violations."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


def _check_family(name: str, family: str, col: np.ndarray) -> None:
    if family not in FAMILIES:
        raise DataError(f"column {name!r}: unknown family {family!r}")
    if family == POISSON_LOG_NORMAL:
        if np.any(col < 0) or np.any(col != np.floor(col)):
            raise DataError(
                f"family violation: column {name!r} tagged {family} must "
                "contain only nonnegative integers"
            )
    elif family == BETA_LOGISTIC:
        if np.any(col < 0.0) or np.any(col > 1.0):
            raise DataError(
                f"family violation: column {name!r} tagged {family} must "
                "lie in [0, 1]"
            )


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatments, and candidate instrument/covariate pool.

    Parameters
    ----------
    y : (n,) outcome vector.
    X : (n, l) treatment matrix, l >= 1.
    Zpool : (n, p) candidate instruments and covariates (p may be 0).
    y_family : distribution family tag of the outcome.
    x_families : family tag per treatment column.
    fixed_instrument_mask : (p,) boolean; True marks a column restricted to
        the treatment equation (never allowed in the outcome model).
    """

    y: np.ndarray
    X: np.ndarray
    Zpool: np.ndarray
    y_family: str = GAUSSIAN
    x_families: tuple[str, ...] = ()
    fixed_instrument_mask: np.ndarray = field(default=None)  # type: ignore[assignment]
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float).reshape(-1))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = _readonly(X)
        Z = np.asarray(self.Zpool, dtype=float)
        if Z.size == 0:
            Z = np.empty((y.size, 0))
        if Z.ndim == 1:
            Z = Z[:, None]
        Z = _readonly(Z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Zpool", Z)

        n, l = X.shape
        p = Z.shape[1]
        if y.size != n or Z.shape[0] != n:
            raise DataError("y, X, Zpool must have equal row counts")
        if l < 1:
            raise DataError("at least one treatment column is required")

        x_families = tuple(self.x_families) or (GAUSSIAN,) * l
        if len(x_families) != l:
            raise DataError("need one family tag per treatment column")
        object.__setattr__(self, "x_families", x_families)

        mask = self.fixed_instrument_mask
        mask = np.zeros(p, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (p,):
            raise DataError("fixed_instrument_mask must have length p")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "fixed_instrument_mask", mask)

        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)) or not np.all(np.isfinite(Z)):
            raise DataError("non-finite values are not supported")

        _check_family("y", self.y_family, y)
        for j in range(l):
            _check_family(f"x{j + 1}", x_families[j], X[:, j])

        if n < l + p + 2:
            raise DataError(
                f"n={n} too small: need at least l + p + 2 = {l + p + 2} rows "
                "for the full model to be estimable"
            )
        full = np.column_stack([np.ones(n), X, Z])
        if np.linalg.matrix_rank(full) < full.shape[1]:
            raise DataError("rank-deficient full design [1 : X : Zpool]")

        if not self.column_names:
            names = tuple(
                ["y"]
                + [f"x{j + 1}" for j in range(l)]
                + [f"z{j + 1}" for j in range(p)]
            )
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def l(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Zpool.shape[1]

    def outcome_eligible(self) -> np.ndarray:
        """Boolean mask of pool columns that may enter the outcome model."""
        return ~self.fixed_instrument_mask


@dataclass(frozen=True)
class ModelPair:
    """Inclusion indicators for the outcome (L) and treatment (M) equations."""

    L: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=bool).copy()
        M = np.asarray(self.M, dtype=bool).copy()
        if L.shape != M.shape or L.ndim != 1:
            raise DataError("L and M must be boolean vectors of equal length")
        L.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "M", M)

    @classmethod
    def empty(cls, p: int) -> "ModelPair":
        return cls(np.zeros(p, dtype=bool), np.zeros(p, dtype=bool))

    def n_instruments(self) -> int:
        """Number of valid-and-relevant instruments: columns in M but not L."""
        return int(np.sum(self.M & ~self.L))


@dataclass(frozen=True)
class PreprocessRecord:
    """Centering/scaling applied to Gaussian columns, for back-transformation.

    Non-Gaussian columns keep mean 0 and scale 1 (untouched).  Pool columns
    are always centered (and scaled when scaling is on): g-priors are
    invariant to this, so it only improves conditioning.
    """

    y_mean: float
    y_scale: float
    x_means: np.ndarray
    x_scales: np.ndarray
    z_means: np.ndarray
    z_scales: np.ndarray

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_scale

    def transform_X(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_means) / self.x_scales

    def transform_Z(self, Z: np.ndarray) -> np.ndarray:
        return (Z - self.z_means) / self.z_scales

    def tau_to_original(self, tau_std: np.ndarray) -> np.ndarray:
        """Map treatment-effect draws back to the original data scale."""
        return np.asarray(tau_std) * self.y_scale / self.x_scales


def _col_sd(col: np.ndarray) -> float:
    sd = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
    return sd if sd > 0 else 1.0


def center_gaussian_columns(d: Dataset, scale: bool = True):
    """Center (and by default scale) the Gaussian columns of [y : X : Zpool].

    Returns the transformed dataset together with a :class:`PreprocessRecord`
    holding the subtracted means and divisors, so that effect summaries and
    predictive densities can be reported on the original scale.  Idempotent,
    and non-Gaussian columns are returned unchanged.
    """
    y = np.asarray(d.y)
    X = np.asarray(d.X)
    Z = np.asarray(d.Zpool)

    if d.y_family == GAUSSIAN:
        y_mean = float(np.mean(y))
        y_scale = _col_sd(y) if scale else 1.0
    else:
        y_mean, y_scale = 0.0, 1.0

    x_means = np.zeros(d.l)
    x_scales = np.ones(d.l)
    for j in range(d.l):
        if d.x_families[j] == GAUSSIAN:
            x_means[j] = float(np.mean(X[:, j]))
            if scale:
                x_scales[j] = _col_sd(X[:, j])

    z_means = Z.mean(axis=0) if d.p else np.zeros(0)
    z_scales = np.ones(d.p)
    if scale and d.p:
        z_scales = np.array([_col_sd(Z[:, j]) for j in range(d.p)])

    record = PreprocessRecord(y_mean, y_scale, x_means, x_scales, z_means, z_scales)
    out = replace(
        d,
        y=record.transform_y(y),
        X=record.transform_X(X),
        Zpool=record.transform_Z(Z) if d.p else Z,
    )
    return out, record


def design_matrices(d: Dataset, mp: ModelPair):
    """Build the outcome design [1 : X : Z_L] and treatment design [1 : Z_M].

    Column order is deterministic: intercept, treatments (outcome design
    only), then included pool columns in ascending index.
    """
    if mp.L.shape != (d.p,) or mp.M.shape != (d.p,):
        raise DataError("model indicators must have length p")
    if np.any(mp.L & d.fixed_instrument_mask):
        raise DataError("masked column requested in the outcome model")
    ones = np.ones((d.n, 1))
    U = np.column_stack([ones, d.X, d.Zpool[:, mp.L]])
    V = np.column_stack([ones, d.Zpool[:, mp.M]])
    for name, mat in (("U", U), ("V", V)):
        if np.linalg.matrix_rank(mat) < mat.shape[1]:
            raise DataError(f"rank-deficient design matrix {name}")
    return U, V


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------

def load_schema(path: str) -> dict:
    """Load a column-role schema from a JSON sidecar file."""
    with open(path) as fh:
        schema = json.load(fh)
    validate_schema(schema)
    return schema


def validate_schema(schema: dict) -> None:
    if "outcome" not in schema or "treatments" not in schema:
        raise DataError("schema needs 'outcome' and 'treatments' entries")
    if not isinstance(schema["treatments"], list) or not schema["treatments"]:
        raise DataError("schema needs at least one treatment column")
    for entry in [schema["outcome"], *schema["treatments"], *schema.get("pool", [])]:
        if "name" not in entry:
            raise DataError("each schema entry needs a 'name'")
        fam = entry.get("family", GAUSSIAN)
        if fam not in FAMILIES:
            raise DataError(f"unknown family {fam!r} for column {entry['name']!r}")


def ingest_csv(path: str, schema: dict) -> Dataset:
    """Read a headered CSV into a validated :class:`Dataset`.

    ``schema`` maps column roles: ``{"outcome": {"name", "family"},
    "treatments": [...], "pool": [{"name", "family", "fixed"?}, ...]}``.
    """
    validate_schema(schema)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            header = [h.strip() for h in header]
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    columns: dict[str, np.ndarray] = {}
    wanted = [schema["outcome"]["name"]]
    wanted += [t["name"] for t in schema["treatments"]]
    wanted += [z["name"] for z in schema.get("pool", [])]
    for name in wanted:
        if name not in header:
            raise DataError(f"schema column {name!r} not found in {path}")
        idx = header.index(name)
        vals = []
        for i, row in enumerate(rows):
            cell = row[idx].strip() if idx < len(row) else ""
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(
                    f"non-numeric cell in column {name!r}, row {i + 2}: {cell!r}"
                ) from None
        columns[name] = np.array(vals)

    pool = schema.get("pool", [])
    y = columns[schema["outcome"]["name"]]
    X = (
        np.column_stack([columns[t["name"]] for t in schema["treatments"]])
        if schema["treatments"]
        else np.empty((y.size, 0))
    )
    Z = (
        np.column_stack([columns[z["name"]] for z in pool])
        if pool
        else np.empty((y.size, 0))
    )
    return Dataset(
        y=y,
        X=X,
        Zpool=Z,
        y_family=schema["outcome"].get("family", GAUSSIAN),
        x_families=tuple(t.get("family", GAUSSIAN) for t in schema["treatments"]),
        fixed_instrument_mask=np.array([bool(z.get("fixed", False)) for z in pool]),
        column_names=tuple(wanted),
    )


def write_csv(d: Dataset, path: str) -> None:
    """Serialize a dataset to CSV at full precision (round-trips bit-exactly)."""
    mat = np.column_stack([d.y, d.X, d.Zpool])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(d.column_names)
        for row in mat:
            writer.writerow([format(v, ".17g") for v in row])


def schema_for(d: Dataset) -> dict:
    """Schema matching :func:`write_csv` output for a dataset."""
    names = d.column_names
    return {
        "outcome": {"name": names[0], "family": d.y_family},
        "treatments": [
            {"name": names[1 + j], "family": d.x_families[j]} for j in range(d.l)
        ],
        "pool": [
            {
                "name": names[1 + d.l + j],
                "family": GAUSSIAN,
                "fixed": bool(d.fixed_instrument_mask[j]),
            }
            for j in range(d.p)
        ],
    }
