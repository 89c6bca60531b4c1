"""Tab-separated tables, atomic writes and covariate adjustment.

Every table has ``#``-prefixed metadata lines, a single header row and
``NA`` for missing values.  Floats are written in shortest round-trip form
so a table read back by :func:`read_table` is identical to what was written.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputError
from .scan import LOCUS_COLUMNS, GenotypeMatrix

NA = "NA"


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def render_table(df: pd.DataFrame, meta: dict | None = None, index: bool = False) -> str:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    df.to_csv(buf, sep="\t", index=index, na_rep=NA, lineterminator="\n")
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, df: pd.DataFrame, meta: dict | None = None, index: bool = False) -> None:
    atomic_write(path, render_table(df, meta, index))


def read_metadata(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
    return meta


def read_table(path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep="\t", comment=None, skiprows=_meta_lines(path),
                           na_values=[NA, ""], keep_default_na=False, **kwargs)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _meta_lines(path) -> int:
    count = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            count += 1
    return count


@dataclass
class TraitTable:
    """Per-individual trait with optional covariates and offsets."""

    ids: list
    trait: np.ndarray
    covariates: pd.DataFrame = field(default_factory=pd.DataFrame)
    offset: np.ndarray | None = None

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        if len(set(self.ids)) != len(self.ids):
            raise InputError("individual ids must be unique")
        self.trait = np.asarray(self.trait, dtype=float)
        if self.trait.shape != (len(self.ids),):
            raise InputError("trait length does not match the ids")
        if np.any(np.isnan(self.trait)):
            raise InputError("trait has missing values")
        self.covariates = pd.DataFrame(self.covariates).reset_index(drop=True)
        if len(self.covariates.columns) and len(self.covariates) != len(self.ids):
            raise InputError("covariate rows do not match the ids")
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float)
            if self.offset.shape != self.trait.shape or not np.all(self.offset > 0):
                raise InputError("offsets must be positive, one per individual")

    def subset(self, ids: Sequence[str]) -> TraitTable:
        pos = {k: i for i, k in enumerate(self.ids)}
        idx = [pos[k] for k in ids]
        cov = self.covariates.iloc[idx] if len(self.covariates.columns) else pd.DataFrame()
        off = None if self.offset is None else self.offset[idx]
        return TraitTable(list(ids), self.trait[idx], cov, off)


def read_traits(path, trait_column: str = "trait", covariates: Sequence[str] = ()):
    """Load a trait table; rows with a missing trait are dropped.

    Returns ``(table, dropped_ids)``.
    """
    df = read_table(path, dtype={"id": str})
    for col in ["id", trait_column, *covariates]:
        if col not in df:
            raise InputError(f"{path}: missing column {col!r}")
    missing = df[trait_column].isna()
    dropped = df.loc[missing, "id"].tolist()
    df = df.loc[~missing].reset_index(drop=True)
    cov = df[list(covariates)]
    if cov.isna().any().any():
        raise InputError(f"{path}: covariates have missing values")
    try:
        cov = cov.astype(float)
        trait = df[trait_column].astype(float).to_numpy()
        offset = df["offset"].astype(float).to_numpy() if "offset" in df else None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return TraitTable(df["id"].tolist(), trait, cov, offset), dropped


def write_traits(path, table: TraitTable, trait_column="trait", meta=None) -> None:
    df = pd.DataFrame({"id": table.ids, trait_column: table.trait})
    for col in table.covariates.columns:
        df[col] = table.covariates[col].to_numpy()
    if table.offset is not None:
        df["offset"] = table.offset
    write_table(path, df, meta)


def read_genotypes(path) -> GenotypeMatrix:
    df = read_table(path, dtype={"id": str, "chrom": str, "group": str})
    for col in LOCUS_COLUMNS:
        if col not in df:
            raise InputError(f"{path}: missing column {col!r}")
    individuals = [c for c in df.columns if c not in LOCUS_COLUMNS]
    try:
        calls = df[individuals].astype(float).to_numpy()
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    loci = df[LOCUS_COLUMNS].astype(object).where(df[LOCUS_COLUMNS].notna(), None)
    return GenotypeMatrix(loci, calls, individuals)


def write_genotypes(path, gm: GenotypeMatrix, meta=None) -> None:
    df = gm.loci[LOCUS_COLUMNS].copy()
    calls = pd.DataFrame(gm.calls, columns=list(gm.individuals)).astype("Int64")
    write_table(path, pd.concat([df, calls], axis=1), meta)


def _collinear(design: np.ndarray, names: Sequence[str]):
    """Columns that add nothing to the span of the columns before them."""
    bad, rank = [], 0
    for j in range(design.shape[1]):
        r = np.linalg.matrix_rank(design[:, : j + 1])
        if r == rank:
            bad.append(names[j])
        rank = r
    return bad


def adjust_covariates(traits: TraitTable, covariates: Sequence[str] = (), log_transform: bool = False) -> np.ndarray:
    """Least-squares residuals of the trait on an intercept and covariates."""
    y = traits.trait
    if log_transform:
        if np.any(y <= 0):
            raise InputError("log transform needs a positive trait")
        y = np.log(y)
    names = ["intercept", *covariates]
    for c in covariates:
        if c not in traits.covariates:
            raise InputError(f"unknown covariate {c!r}")
    design = np.column_stack([np.ones(y.size)] + [traits.covariates[c].to_numpy(float) for c in covariates])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        bad = _collinear(design, names)
        raise InputError(f"design matrix is rank deficient; collinear columns: {', '.join(bad)}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return resid - resid.mean()
