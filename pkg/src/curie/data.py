"""Columnar datasets, shared schema, selections, normalization, and
synthetic patient-style data generation.

Datasets are immutable after construction; every operation returns a
new dataset.  Categorical levels are declared in the schema (not
inferred from data) so all members of a consortium share one design
encoding.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from curie.errors import CurieError


class SchemaMismatch(CurieError):
    pass


class UnknownColumn(CurieError):
    pass


class DegenerateColumn(CurieError):
    pass


class InvalidProfile(CurieError):
    pass


# --------------------------------------------------------------------------
# schema

@dataclass(frozen=True)
class ColumnType:
    """One of integer | real | categorical(levels) | boolean.

    Numeric columns may declare (lo, hi) bounds; when present they are
    consortium constants used for normalization instead of per-member
    data minima/maxima.
    """

    kind: str
    levels: tuple[str, ...] = ()
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("integer", "real", "categorical", "boolean"):
            raise SchemaMismatch(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise SchemaMismatch("categorical column needs >= 2 levels")
        if self.kind != "categorical" and self.levels:
            raise SchemaMismatch(f"{self.kind} column cannot declare levels")

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("integer", "real")


@dataclass(frozen=True)
class Column:
    name: str
    ctype: ColumnType


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    target: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate column names in schema")
        tgt = self.column(self.target)
        if tgt.ctype.kind != "real":
            raise SchemaMismatch(f"target column {self.target!r} must be real")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"no column named {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.name != self.target)

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            d: dict = {"name": c.name, "type": c.ctype.kind}
            if c.ctype.levels:
                d["levels"] = list(c.ctype.levels)
            if c.ctype.bounds is not None:
                d["bounds"] = list(c.ctype.bounds)
            cols.append(d)
        return {"columns": cols, "target": self.target}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Schema":
        cols = []
        for c in obj["columns"]:
            cols.append(Column(c["name"], ColumnType(
                c["type"],
                tuple(c.get("levels", ())),
                tuple(c["bounds"]) if c.get("bounds") else None,
            )))
        return cls(tuple(cols), obj["target"])


def check_shared_schema(a: Schema, b: Schema) -> list[str]:
    """Order-insensitive name+type+levels comparison.

    Returns an empty list when the schemas agree, else one message per
    mismatching column.
    """
    report: list[str] = []
    a_cols = {c.name: c.ctype for c in a.columns}
    b_cols = {c.name: c.ctype for c in b.columns}
    for name in sorted(set(a_cols) - set(b_cols)):
        report.append(f"column {name!r} missing from second schema")
    for name in sorted(set(b_cols) - set(a_cols)):
        report.append(f"column {name!r} missing from first schema")
    for name in sorted(set(a_cols) & set(b_cols)):
        ta, tb = a_cols[name], b_cols[name]
        if ta.kind != tb.kind:
            report.append(f"column {name!r}: type {ta.kind} vs {tb.kind}")
        elif ta.levels != tb.levels:
            report.append(f"column {name!r}: levels {ta.levels} vs {tb.levels}")
    if a.target != b.target:
        report.append(f"target column {a.target!r} vs {b.target!r}")
    return report


# --------------------------------------------------------------------------
# dataset

@dataclass(frozen=True)
class Dataset:
    schema: Schema
    columns: Mapping[str, tuple]
    provenance: str | None = None

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise SchemaMismatch("ragged columns")
        missing = {c.name for c in self.schema.columns} - set(self.columns)
        if missing:
            raise SchemaMismatch(f"columns absent from data: {sorted(missing)}")

    @property
    def n(self) -> int:
        first = next(iter(self.columns.values()), ())
        return len(first)

    def __len__(self) -> int:
        return self.n

    def column(self, name: str) -> tuple:
        if name not in self.columns:
            raise UnknownColumn(f"no column named {name!r}")
        return self.columns[name]

    def row(self, i: int) -> dict:
        return {name: vals[i] for name, vals in self.columns.items()}

    def rows(self) -> Iterator[dict]:
        for i in range(self.n):
            yield self.row(i)

    def take(self, indices: Sequence[int]) -> "Dataset":
        cols = {name: tuple(vals[i] for i in indices)
                for name, vals in self.columns.items()}
        return Dataset(self.schema, cols, self.provenance)

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["Dataset", "Dataset"]:
        """Random (1-fraction, fraction) split; second part is the holdout."""
        idx = rng.permutation(self.n)
        cut = int(round(self.n * (1.0 - fraction)))
        return self.take(idx[:cut].tolist()), self.take(idx[cut:].tolist())


def from_rows(schema: Schema, rows: Iterable[Mapping], provenance: str | None = None) -> Dataset:
    names = [c.name for c in schema.columns]
    cols: dict[str, list] = {n: [] for n in names}
    for row in rows:
        for n in names:
            cols[n].append(row[n])
    return Dataset(schema, {n: tuple(v) for n, v in cols.items()}, provenance)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise ValueError("nothing to concatenate")
    schema = datasets[0].schema
    cols = {c.name: tuple(v for ds in datasets for v in ds.column(c.name))
            for c in schema.columns}
    return Dataset(schema, cols)


def _coerce_cell(raw: str, ctype: ColumnType, where: str):
    text = raw.strip()
    if text == "":
        raise SchemaMismatch(f"{where}: missing value")
    if ctype.kind == "integer":
        try:
            return int(text)
        except ValueError:
            raise TypeError(f"{where}: {text!r} is not an integer") from None
    if ctype.kind == "real":
        try:
            v = float(text)
        except ValueError:
            raise TypeError(f"{where}: {text!r} is not a real") from None
        if not math.isfinite(v):
            raise TypeError(f"{where}: non-finite value")
        return v
    if ctype.kind == "boolean":
        low = text.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise TypeError(f"{where}: {text!r} is not a boolean")
    if text not in ctype.levels:
        raise TypeError(f"{where}: {text!r} not in declared levels {ctype.levels}")
    return text


def load_dataset(source, schema: Schema, provenance: str | None = None) -> Dataset:
    """Load a CSV stream/string against *schema*.

    Header names must match the schema exactly (order-insensitive);
    rows with missing values are rejected with their row index.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("empty input: no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise SchemaMismatch("duplicate column names in header")
    expected = {c.name for c in schema.columns}
    extra = set(header) - expected
    if extra:
        raise SchemaMismatch(f"unknown columns in header: {sorted(extra)}")
    missing = expected - set(header)
    if missing:
        raise SchemaMismatch(f"columns missing from header: {sorted(missing)}")

    ctypes = {c.name: c.ctype for c in schema.columns}
    cols: dict[str, list] = {name: [] for name in header}
    for ridx, row in enumerate(reader, start=1):
        if len(row) != len(header):
            raise SchemaMismatch(f"row {ridx}: expected {len(header)} cells, got {len(row)}")
        for name, raw in zip(header, row):
            cols[name].append(_coerce_cell(raw, ctypes[name], f"row {ridx}, column {name!r}"))
    return Dataset(schema, {n: tuple(v) for n, v in cols.items()}, provenance)


def dump_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    names = [c.name for c in ds.schema.columns]
    writer.writerow(names)
    for row in ds.rows():
        writer.writerow([row[n] for n in names])
    return buf.getvalue()


# --------------------------------------------------------------------------
# selections

@dataclass(frozen=True)
class RowFilter:
    """Fully-resolved column predicate: value is a scalar, or a tuple of
    scalars for the ``in`` operation."""

    column: str
    op: str
    value: object

    def to_json(self) -> dict:
        v = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"column": self.column, "op": self.op, "value": v}


_ORDER_OPS = ("<", ">")


def _match(cell, op: str, value, ctype: ColumnType, column: str) -> bool:
    if op == "in":
        if not isinstance(value, tuple):
            raise TypeError(f"'in' filter on {column!r} needs a value list")
        return cell in value
    if op in _ORDER_OPS:
        if not ctype.is_numeric:
            raise TypeError(f"ordering filter on non-numeric column {column!r}")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise TypeError(f"filter on {column!r}: {value!r} is not numeric")
        return cell < value if op == "<" else cell > value
    if op == "=":
        return cell == value
    if op == "!=":
        return cell != value
    raise TypeError(f"unsupported filter operation {op!r}")


def apply_selections(ds: Dataset, filters: Sequence[RowFilter]) -> Dataset:
    """Rows satisfying the conjunction of *filters*; empty list is identity."""
    if not filters:
        return ds
    for f in filters:
        if not ds.schema.has_column(f.column):
            raise UnknownColumn(f"filter references unknown column {f.column!r}")
    keep = []
    ctypes = {c.name: c.ctype for c in ds.schema.columns}
    cols = {f.column: ds.column(f.column) for f in filters}
    for i in range(ds.n):
        if all(_match(cols[f.column][i], f.op, f.value, ctypes[f.column], f.column)
               for f in filters):
            keep.append(i)
    return ds.take(keep)


# --------------------------------------------------------------------------
# normalization

NormalizationMap = dict[str, tuple[float, float]]


def column_bounds(ds: Dataset, declared: bool = True) -> NormalizationMap:
    """(min, max) per numeric column; declared schema bounds win when
    present and *declared* is true."""
    out: NormalizationMap = {}
    for c in ds.schema.columns:
        if not c.ctype.is_numeric:
            continue
        if declared and c.ctype.bounds is not None:
            out[c.name] = (float(c.ctype.bounds[0]), float(c.ctype.bounds[1]))
        else:
            vals = ds.column(c.name)
            if not vals:
                raise DegenerateColumn(f"column {c.name!r} has no rows to scan")
            out[c.name] = (float(min(vals)), float(max(vals)))
    return out


def normalize_value(v: float, lo: float, hi: float) -> float:
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def denormalize_value(u: float, lo: float, hi: float) -> float:
    return (u + 1.0) / 2.0 * (hi - lo) + lo


def normalized_schema(schema: Schema) -> Schema:
    """Schema after normalization: numeric columns become plain reals."""
    cols = tuple(
        Column(c.name, ColumnType("real")) if c.ctype.is_numeric else c
        for c in schema.columns
    )
    return Schema(cols, schema.target)


def normalize_columns(ds: Dataset, bounds: NormalizationMap | None = None
                      ) -> tuple[Dataset, NormalizationMap]:
    """Affinely map each numeric column (target included) to [-1, 1].

    Categorical and boolean columns are untouched.  Returns the
    normalized dataset and the per-column (min, max) map needed to
    denormalize predictions.  Raises :class:`DegenerateColumn` when a
    column has max == min.

    Without an explicit *bounds* map, each column's own data minimum
    and maximum are used (so the observed extremes land exactly on -1
    and +1); pass consortium-declared bounds to make all members apply
    one shared affine map.
    """
    if bounds is None:
        bounds = column_bounds(ds, declared=False)
    new_cols: dict[str, tuple] = {}
    for c in ds.schema.columns:
        vals = ds.column(c.name)
        if c.ctype.is_numeric:
            lo, hi = bounds[c.name]
            if hi <= lo:
                raise DegenerateColumn(f"column {c.name!r}: max ({hi}) <= min ({lo})")
            new_cols[c.name] = tuple(normalize_value(float(v), lo, hi) for v in vals)
        else:
            new_cols[c.name] = vals
    return (Dataset(normalized_schema(ds.schema), new_cols, ds.provenance),
            dict(bounds))


# --------------------------------------------------------------------------
# design matrices

@dataclass(frozen=True)
class DesignEncoding:
    """Deterministic row-to-vector map: intercept, numerics in schema
    order, then per-categorical one-hot columns with the first declared
    level dropped as reference; booleans encode to one 0/1 column."""

    schema: Schema
    features: tuple[tuple, ...] = field(init=False)

    def __post_init__(self):
        feats: list[tuple] = [("intercept",)]
        for c in self.schema.feature_columns:
            if c.ctype.is_numeric:
                feats.append(("numeric", c.name))
        for c in self.schema.feature_columns:
            if c.ctype.kind == "categorical":
                for level in c.ctype.levels[1:]:
                    feats.append(("onehot", c.name, level))
            elif c.ctype.kind == "boolean":
                feats.append(("boolean", c.name))
        object.__setattr__(self, "features", tuple(feats))

    @property
    def width(self) -> int:
        return len(self.features)

    def encode_row(self, row: Mapping) -> np.ndarray:
        x = np.zeros(self.width)
        for j, feat in enumerate(self.features):
            if feat[0] == "intercept":
                x[j] = 1.0
            elif feat[0] == "numeric":
                v = row[feat[1]]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise SchemaMismatch(f"column {feat[1]!r}: expected numeric, got {v!r}")
                x[j] = float(v)
            elif feat[0] == "onehot":
                level = row[feat[1]]
                col = self.schema.column(feat[1])
                if level not in col.ctype.levels:
                    raise SchemaMismatch(
                        f"column {feat[1]!r}: {level!r} not in declared levels")
                x[j] = 1.0 if level == feat[2] else 0.0
            else:
                x[j] = 1.0 if row[feat[1]] else 0.0
        return x

    def to_json(self) -> list:
        return [list(f) for f in self.features]


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    Y: np.ndarray
    encoding: DesignEncoding


def to_design_matrix(ds: Dataset, encoding: DesignEncoding | None = None) -> DesignMatrix:
    if ds.n == 0:
        raise SchemaMismatch("cannot build a design matrix from an empty dataset")
    enc = encoding or DesignEncoding(ds.schema)
    X = np.empty((ds.n, enc.width))
    for i, row in enumerate(ds.rows()):
        X[i] = enc.encode_row(row)
    Y = np.asarray(ds.column(ds.schema.target), dtype=float)
    return DesignMatrix(X, Y, enc)


# --------------------------------------------------------------------------
# synthetic members

@dataclass(frozen=True)
class SynthProfile:
    """Generator recipe for one member's patient-style dataset.

    ``coefficients`` is the ground-truth weight vector over the schema's
    design encoding (raw, unnormalized scale); doses are produced as
    y = coefficients . x + Normal(0, noise_sigma), clipped to stay
    positive.  ``level_coefficients`` optionally overrides the vector
    per level of one categorical column (population heterogeneity).
    """

    member_id: str
    n: int
    numeric_ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    categorical_mixes: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    boolean_probs: Mapping[str, float] = field(default_factory=dict)
    coefficients: tuple[float, ...] = ()
    level_column: str | None = None
    level_coefficients: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    noise_sigma: float = 0.0
    min_dose: float = 0.5

    def to_json(self) -> dict:
        return {
            "member_id": self.member_id,
            "n": self.n,
            "numeric_ranges": {k: list(v) for k, v in self.numeric_ranges.items()},
            "categorical_mixes": {k: dict(v) for k, v in self.categorical_mixes.items()},
            "boolean_probs": dict(self.boolean_probs),
            "coefficients": list(self.coefficients),
            "level_column": self.level_column,
            "level_coefficients": {k: list(v) for k, v in self.level_coefficients.items()},
            "noise_sigma": self.noise_sigma,
            "min_dose": self.min_dose,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SynthProfile":
        return cls(
            member_id=obj["member_id"],
            n=int(obj["n"]),
            numeric_ranges={k: tuple(v) for k, v in obj.get("numeric_ranges", {}).items()},
            categorical_mixes={k: dict(v) for k, v in obj.get("categorical_mixes", {}).items()},
            boolean_probs=dict(obj.get("boolean_probs", {})),
            coefficients=tuple(obj.get("coefficients", ())),
            level_column=obj.get("level_column"),
            level_coefficients={k: tuple(v) for k, v in obj.get("level_coefficients", {}).items()},
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            min_dose=float(obj.get("min_dose", 0.5)),
        )


def _check_profile(profile: SynthProfile, schema: Schema, width: int) -> None:
    if profile.n <= 0:
        raise InvalidProfile(f"{profile.member_id}: n must be positive")
    for col, mix in profile.categorical_mixes.items():
        ctype = schema.column(col).ctype
        if ctype.kind != "categorical":
            raise InvalidProfile(f"{profile.member_id}: {col!r} is not categorical")
        unknown = set(mix) - set(ctype.levels)
        if unknown:
            raise InvalidProfile(f"{profile.member_id}: unknown levels {sorted(unknown)}")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise InvalidProfile(f"{profile.member_id}: mix for {col!r} must sum to 1")
    if len(profile.coefficients) != width:
        raise InvalidProfile(
            f"{profile.member_id}: coefficient vector has {len(profile.coefficients)} "
            f"entries, design encoding has {width}")
    for level, eta in profile.level_coefficients.items():
        if len(eta) != width:
            raise InvalidProfile(f"{profile.member_id}: override for {level!r} wrong length")
    if profile.noise_sigma < 0:
        raise InvalidProfile(f"{profile.member_id}: negative noise sigma")


def synth_members(seed: int, schema: Schema, profiles: Sequence[SynthProfile]
                  ) -> list[Dataset]:
    """Generate one dataset per profile, reproducibly from *seed*."""
    enc = DesignEncoding(schema)
    seen = set()
    for p in profiles:
        if p.member_id in seen:
            raise InvalidProfile(f"duplicate member id {p.member_id!r}")
        seen.add(p.member_id)
        _check_profile(p, schema, enc.width)

    datasets = []
    master = np.random.SeedSequence(seed)
    for p, ss in zip(profiles, master.spawn(len(profiles))):
        rng = np.random.default_rng(ss)
        cols: dict[str, list] = {}
        for c in schema.feature_columns:
            if c.ctype.is_numeric:
                lo, hi = p.numeric_ranges.get(
                    c.name, c.ctype.bounds if c.ctype.bounds else (0.0, 1.0))
                vals = rng.uniform(lo, hi, p.n)
                if c.ctype.kind == "integer":
                    cols[c.name] = [int(round(v)) for v in vals]
                else:
                    cols[c.name] = [float(v) for v in vals]
            elif c.ctype.kind == "categorical":
                mix = p.categorical_mixes.get(c.name)
                if mix is None:
                    levels, probs = c.ctype.levels, None
                else:
                    levels = tuple(mix.keys())
                    probs = np.asarray(list(mix.values()))
                    probs = probs / probs.sum()
                cols[c.name] = [str(v) for v in rng.choice(levels, size=p.n, p=probs)]
            else:
                prob = p.boolean_probs.get(c.name, 0.5)
                cols[c.name] = [bool(v) for v in rng.random(p.n) < prob]

        doses = []
        for i in range(p.n):
            row = {name: vals[i] for name, vals in cols.items()}
            eta = np.asarray(p.coefficients)
            if p.level_column is not None:
                override = p.level_coefficients.get(row[p.level_column])
                if override is not None:
                    eta = np.asarray(override)
            row[schema.target] = 0.0
            y = float(eta @ enc.encode_row(row))
            if p.noise_sigma > 0:
                y += float(rng.normal(0.0, p.noise_sigma))
            doses.append(max(y, p.min_dose))
        cols[schema.target] = doses
        datasets.append(Dataset(
            schema, {k: tuple(v) for k, v in cols.items()}, p.member_id))
    return datasets


def warfarin_schema() -> Schema:
    """The eight-input anticoagulant-dosing schema plus the dose target."""
    return Schema((
        Column("age", ColumnType("integer", bounds=(18, 95))),
        Column("height", ColumnType("real", bounds=(140.0, 200.0))),
        Column("weight", ColumnType("real", bounds=(40.0, 140.0))),
        Column("vkorc1", ColumnType("categorical", ("A/A", "A/G", "G/G"))),
        Column("cyp2c9", ColumnType("categorical",
                                    ("*1/*1", "*1/*2", "*1/*3", "*2/*2", "*2/*3", "*3/*3"))),
        Column("race", ColumnType("categorical", ("Asian", "Black", "White"))),
        Column("inducer", ColumnType("boolean")),
        Column("amiodarone", ColumnType("boolean")),
        Column("dose", ColumnType("real", bounds=(0.0, 90.0))),
    ), target="dose")


def numeric_schema(n_features: int, lo: float = -1.0, hi: float = 1.0,
                   dose_bounds: tuple[float, float] = (0.0, 60.0)) -> Schema:
    """All-numeric schema used by randomized consortium tests/benchmarks."""
    cols = [Column(f"x{i}", ColumnType("real", bounds=(lo, hi)))
            for i in range(n_features)]
    cols.append(Column("dose", ColumnType("real", bounds=dose_bounds)))
    return Schema(tuple(cols), target="dose")


def synth_numeric_members(seed: int, n_members: int, n_features: int,
                          rows_per_member: Sequence[int],
                          noise_sigma: float = 0.5) -> tuple[Schema, list[Dataset], np.ndarray]:
    """Random all-numeric consortium with a shared ground-truth weight
    vector; returns (schema, datasets, eta_true)."""
    schema = numeric_schema(n_features)
    rng = np.random.default_rng(seed)
    eta = np.concatenate([[20.0], rng.uniform(-4.0, 4.0, n_features)])
    profiles = [
        SynthProfile(
            member_id=f"P{i+1}",
            n=rows_per_member[i],
            numeric_ranges={f"x{j}": (-1.0, 1.0) for j in range(n_features)},
            coefficients=tuple(eta),
            noise_sigma=noise_sigma,
        )
        for i in range(n_members)
    ]
    return schema, synth_members(seed, schema, profiles), eta
