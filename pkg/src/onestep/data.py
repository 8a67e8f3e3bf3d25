"""Study data, target profiles, and missing-value handling.

Delimited input is comma-separated with a header row, UTF-8, ``.`` as the
decimal separator, and empty cells treated as missing. Numbers are parsed
with :func:`float` and written back with :func:`repr`, so a load/save/load
cycle is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .basis import BasisSpec, expand


class SchemaError(ValueError):
    """Input data does not match the declared column roles."""


@dataclass(frozen=True)
class Schema:
    """Column roles for :func:`load_dataset`.

    ``covariates`` defaults to every column without another role. ``outcomes``
    may be empty when only weights are needed.
    ``categorical`` maps a variable name to the one-hot columns encoding it;
    those columns get the missing-category rule instead of mean imputation.
    """

    treatment: str
    outcomes: tuple[str, ...]
    selection: str | None = None
    id: str | None = None
    covariates: tuple[str, ...] | None = None
    categorical: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        outs = (self.outcomes,) if isinstance(self.outcomes, str) else tuple(self.outcomes)
        object.__setattr__(self, "outcomes", outs)
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))
        cat = {k: tuple(v) for k, v in dict(self.categorical).items()}
        object.__setattr__(self, "categorical", cat)


@dataclass(frozen=True)
class StudyDataset:
    """Unit-level study data.

    ``treatment`` and ``outcomes`` hold NaN on rows with ``selection == 0``
    (non-participants in a nested cohort carry covariates only).
    """

    covariates: np.ndarray
    names: tuple[str, ...]
    treatment: np.ndarray
    outcomes: Mapping[str, np.ndarray]
    selection: np.ndarray | None = None
    ids: tuple[str, ...] | None = None
    categorical: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != X.shape[1]:
            raise SchemaError("covariate names do not match the number of columns")
        z = np.asarray(self.treatment, dtype=float)
        outs = {k: np.asarray(v, dtype=float) for k, v in self.outcomes.items()}
        object.__setattr__(self, "treatment", z)
        object.__setattr__(self, "outcomes", outs)
        if self.selection is not None:
            object.__setattr__(self, "selection", np.asarray(self.selection, dtype=int))
        ids = self.ids if self.ids is not None else tuple(str(i) for i in range(n))
        object.__setattr__(self, "ids", tuple(str(i) for i in ids))
        if z.shape != (n,) or any(v.shape != (n,) for v in outs.values()) or len(self.ids) != n:
            raise SchemaError("all columns must have one entry per row")
        sel = self.selected
        zs = z[sel]
        if np.isnan(zs).any() or not np.isin(zs, (0.0, 1.0)).all():
            raise SchemaError("treatment must be 0/1 on every selected row")
        for name, y in outs.items():
            if not np.isfinite(y[sel]).all():
                raise SchemaError(f"outcome {name!r} is missing on selected rows")
        if sel.any() and not ((zs == 1).any() and (zs == 0).any()):
            raise SchemaError("both treatment groups must be non-empty among selected rows")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def selected(self) -> np.ndarray:
        if self.selection is None:
            return np.ones(self.n, dtype=bool)
        return self.selection == 1

    @property
    def outcome(self) -> np.ndarray:
        """The first declared outcome."""
        if not self.outcomes:
            raise SchemaError("dataset has no outcome columns")
        return next(iter(self.outcomes.values()))

    def group(self, z: int) -> np.ndarray:
        """Row indices of selected units with treatment ``z``."""
        return np.flatnonzero(self.selected & (self.treatment == z))

    def has_missing(self) -> bool:
        return bool(np.isnan(self.covariates).any())

    def subset(self, rows) -> "StudyDataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return replace(
            self,
            covariates=self.covariates[rows],
            treatment=self.treatment[rows],
            outcomes={k: v[rows] for k, v in self.outcomes.items()},
            selection=None if self.selection is None else self.selection[rows],
            ids=tuple(self.ids[i] for i in rows),
        )


@dataclass(frozen=True)
class TargetProfile:
    """Target-population means of basis functions, with optional spreads."""

    names: tuple[str, ...]
    means: np.ndarray
    spreads: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        if len(self.names) == 0:
            means = means.reshape(0)
        object.__setattr__(self, "means", means)
        if means.shape != (len(self.names),):
            raise ValueError("profile means and names differ in length")
        if self.spreads is not None:
            sp = np.atleast_1d(np.asarray(self.spreads, dtype=float)).reshape(means.shape)
            if (sp < 0).any() or not np.isfinite(sp).all():
                raise ValueError("profile spreads must be finite and nonnegative")
            object.__setattr__(self, "spreads", sp)

    def select(self, labels: Sequence[str]) -> "TargetProfile":
        """Reorder/subset to ``labels``; raises KeyError for absent labels."""
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [lab for lab in labels if lab not in pos]
        if missing:
            raise KeyError(f"profile has no entries for {missing}")
        idx = [pos[lab] for lab in labels]
        return TargetProfile(
            tuple(labels),
            self.means[idx],
            None if self.spreads is None else self.spreads[idx],
        )


@dataclass(frozen=True)
class MissingnessPolicy:
    continuous_rule: str = "mean-indicator"
    categorical_rule: str = "missing-category"

    def __post_init__(self):
        if self.continuous_rule != "mean-indicator":
            raise ValueError(f"unknown continuous rule {self.continuous_rule!r}")
        if self.categorical_rule != "missing-category":
            raise ValueError(f"unknown categorical rule {self.categorical_rule!r}")


def _parse_cell(s: str) -> float:
    s = s.strip()
    if s == "":
        return np.nan
    try:
        return float(s)
    except ValueError:
        return np.nan


def _format(x: float) -> str:
    if np.isnan(x):
        return ""
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def read_table(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} cells, header has {len(header)}")
    return header, body


def load_dataset(path, schema: Schema) -> StudyDataset:
    """Read a delimited file and bind column roles.

    Non-numeric covariate cells become NaN. Treatment (and selection) must be
    0/1 and outcomes numeric on every selected row; otherwise a
    :class:`SchemaError` naming the column is raised.
    """
    header, body = read_table(path)
    col = {h: i for i, h in enumerate(header)}
    required = [schema.treatment, *schema.outcomes]
    required += [c for c in (schema.selection, schema.id) if c]
    for c in required:
        if c not in col:
            raise SchemaError(f"column {c!r} not found in {path}")
    role = set(required)
    covs = schema.covariates
    if covs is None:
        covs = tuple(h for h in header if h not in role)
    for c in covs:
        if c not in col:
            raise SchemaError(f"covariate column {c!r} not found in {path}")
    for var, cols in schema.categorical.items():
        for c in cols:
            if c not in covs:
                raise SchemaError(f"categorical column {c!r} of {var!r} is not a covariate")

    def raw(name):
        return [r[col[name]].strip() for r in body]

    def strict(name, binary):
        vals = raw(name)
        out = np.full(len(vals), np.nan)
        for i, v in enumerate(vals):
            if v == "":
                continue
            try:
                x = float(v)
            except ValueError:
                raise SchemaError(f"column {name!r} has non-numeric value {v!r} (row {i + 2})")
            if binary and x not in (0.0, 1.0):
                raise SchemaError(f"column {name!r} has value {v!r} outside {{0,1}} (row {i + 2})")
            out[i] = x
        return out

    sel = None
    if schema.selection:
        s = strict(schema.selection, True)
        if np.isnan(s).any():
            raise SchemaError(f"column {schema.selection!r} has missing values")
        sel = s.astype(int)
    selected = np.ones(len(body), dtype=bool) if sel is None else sel == 1
    z = strict(schema.treatment, True)
    if np.isnan(z[selected]).any():
        raise SchemaError(f"column {schema.treatment!r} is missing on selected rows")
    outs = {}
    for o in schema.outcomes:
        y = strict(o, False)
        if np.isnan(y[selected]).any():
            raise SchemaError(f"column {o!r} is missing on selected rows")
        outs[o] = y
    X = np.array([[_parse_cell(r[col[c]]) for c in covs] for r in body], dtype=float)
    X = X.reshape(len(body), len(covs))
    ids = tuple(raw(schema.id)) if schema.id else None
    return StudyDataset(X, covs, z, outs, sel, ids, schema.categorical)


def save_dataset(ds: StudyDataset, path, treatment="Z", selection="D", id_col="id") -> None:
    header = [id_col, *ds.names, treatment, *ds.outcomes]
    if ds.selection is not None:
        header.append(selection)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [ds.ids[i], *(_format(x) for x in ds.covariates[i]), _format(ds.treatment[i])]
            row += [_format(v[i]) for v in ds.outcomes.values()]
            if ds.selection is not None:
                row.append(str(int(ds.selection[i])))
            w.writerow(row)


def impute_missing(ds: StudyDataset, policy: MissingnessPolicy | None = None) -> StudyDataset:
    """Fill missing covariates.

    Continuous columns get the mean of their observed entries plus an appended
    ``<name>_missing`` indicator. One-hot columns of a categorical variable
    are set to 0 on rows where the variable is missing, and a single
    ``<var>_missing`` category column is appended. New columns follow the
    original columns, in the order of the columns they come from.
    """
    policy = policy or MissingnessPolicy()
    X = ds.covariates.copy()
    miss = np.isnan(X)
    if not miss.any():
        return ds
    cat_of = {c: var for var, cols in ds.categorical.items() for c in cols}
    pos = {n: j for j, n in enumerate(ds.names)}
    names = list(ds.names)
    extra_cols, extra_names = [], []
    done_vars = set()
    for j, name in enumerate(ds.names):
        var = cat_of.get(name)
        if var is not None:
            if var in done_vars:
                continue
            done_vars.add(var)
            idx = [pos[c] for c in ds.categorical[var]]
            rows = miss[:, idx].any(axis=1)
            if rows.any():
                if rows.all():
                    raise ValueError(f"categorical variable {var!r} is entirely missing")
                X[np.ix_(rows, idx)] = 0.0
                extra_cols.append(rows.astype(float))
                extra_names.append(f"{var}_missing")
            continue
        mj = miss[:, j]
        if not mj.any():
            continue
        if mj.all():
            raise ValueError(f"covariate {name!r} is entirely missing; no mean exists")
        X[mj, j] = X[~mj, j].mean()
        extra_cols.append(mj.astype(float))
        extra_names.append(f"{name}_missing")
    for nm in extra_names:
        if nm in pos:
            raise ValueError(f"indicator column {nm!r} clashes with an existing covariate")
    if extra_cols:
        X = np.column_stack([X, *extra_cols])
    return replace(ds, covariates=X, names=tuple(names + extra_names))


def profile_from_sample(
    ds: StudyDataset | np.ndarray,
    basis: BasisSpec | None = None,
    rows=None,
    names: Sequence[str] | None = None,
) -> TargetProfile:
    """Target profile from unit-level data.

    Means and population standard deviations (divisor ``n``) of the expanded
    basis over ``rows`` (all rows when ``None``).
    """
    if isinstance(ds, StudyDataset):
        X, names = ds.covariates, ds.names
    else:
        X = np.asarray(ds, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = names if names is not None else tuple(f"c{j}" for j in range(X.shape[1]))
    if rows is not None:
        X = X[rows]
    if X.shape[0] == 0:
        raise ValueError("cannot build a profile from an empty subset")
    basis = basis if basis is not None else BasisSpec.main_terms(X.shape[1])
    Bx = expand(X, basis)
    if np.isnan(Bx).any():
        raise ValueError("profile data contains missing values; impute first")
    mean = Bx.mean(axis=0)
    sd = np.sqrt(np.mean((Bx - mean) ** 2, axis=0))
    return TargetProfile(tuple(basis.labels(names)), mean, sd)


def load_profile(path) -> TargetProfile:
    """Read a profile file with columns ``term,mean[,sd]``."""
    header, body = read_table(path)
    h = [c.lower() for c in header]
    if "term" not in h or "mean" not in h:
        raise SchemaError(f"{path}: profile needs 'term' and 'mean' columns")
    it, im = h.index("term"), h.index("mean")
    isd = h.index("sd") if "sd" in h else None
    names, means, sds = [], [], []
    for r in body:
        names.append(r[it].strip())
        try:
            means.append(float(r[im]))
            if isd is not None:
                sds.append(float(r[isd]))
        except ValueError as e:
            raise SchemaError(f"{path}: bad number in profile row {r}") from e
    if len(set(names)) != len(names):
        raise SchemaError(f"{path}: duplicate profile terms")
    return TargetProfile(tuple(names), np.array(means), np.array(sds) if isd is not None else None)


def save_profile(profile: TargetProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "mean", "sd"] if profile.spreads is not None else ["term", "mean"])
        for i, name in enumerate(profile.names):
            row = [name, repr(float(profile.means[i]))]
            if profile.spreads is not None:
                row.append(repr(float(profile.spreads[i])))
            w.writerow(row)


def write_weights(path, ids: Sequence[str], weights: np.ndarray) -> None:
    """Write ``id,weight`` rows."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "weight"])
        for i, x in zip(ids, weights):
            w.writerow([i, repr(float(x))])


def read_weights(path) -> tuple[tuple[str, ...], np.ndarray]:
    header, body = read_table(path)
    if [h.lower() for h in header] != ["id", "weight"]:
        raise SchemaError(f"{path}: expected header 'id,weight'")
    try:
        return tuple(r[0] for r in body), np.array([float(r[1]) for r in body])
    except ValueError as e:
        raise SchemaError(f"{path}: non-numeric weight") from e
