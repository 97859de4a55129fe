"""Reading and writing observation tables, site tables and run configs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingArtifactError, ValidationError
from .lgm import ObservationData


@dataclass
class SiteTable:
    ids: list
    coords: np.ndarray  # (J, 2) km


@dataclass
class ObservationTable:
    """Annual maxima keyed by ``(site_id, year)``; absent pairs are not stored."""

    records: dict

    def site_ids(self) -> list:
        return sorted({s for s, _ in self.records}, key=str)

    def years_of(self, site) -> list:
        return sorted(y for s, y in self.records if s == site)

    def to_data(self, site_ids) -> ObservationData:
        """Group by site in the given order; unknown sites are an error."""
        known = set(site_ids)
        extra = sorted({s for s, _ in self.records} - known, key=str)
        if extra:
            raise ValidationError(f"observations for unknown site '{extra[0]}'")
        per_site = {s: [] for s in site_ids}
        for (s, yr), v in self.records.items():
            per_site[s].append((yr, v))
        values, years = [], []
        for s in site_ids:
            rows = sorted(per_site[s])
            years.append(np.array([r[0] for r in rows], dtype=int))
            values.append(np.array([r[1] for r in rows], dtype=float))
        return ObservationData.from_lists(values, years)


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"expected file not found: {p}")
    return p


def _read_csv(path, header):
    p = _require(path)
    with open(p, newline="") as fh:
        r = csv.reader(fh)
        try:
            got = [h.strip() for h in next(r)]
        except StopIteration:
            raise ValidationError(f"{p}: empty file") from None
        if got != list(header):
            raise ValidationError(f"{p}: header must be {','.join(header)}, got {','.join(got)}")
        for lineno, row in enumerate(r, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{p}:{lineno}: expected {len(header)} fields")
            yield lineno, [c.strip() for c in row]


def ingest_observations(path) -> ObservationTable:
    """Read ``site_id,year,value_mm``; rejects duplicates and non-positive values."""
    records = {}
    for lineno, (site, year, value) in _read_csv(path, ("site_id", "year", "value_mm")):
        try:
            yr = int(year)
            v = float(value)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: cannot parse year/value") from None
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"{path}:{lineno}: value_mm must be positive and finite, got {value}")
        if (site, yr) in records:
            raise ValidationError(f"{path}:{lineno}: duplicate observation for site {site}, year {yr}")
        records[(site, yr)] = v
    return ObservationTable(records)


def write_observations(path, site_ids, data: ObservationData) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "year", "value_mm"])
        for i, s in enumerate(site_ids):
            sl = slice(data.offsets[i], data.offsets[i + 1])
            yrs = data.years[sl] if data.years is not None else np.arange(sl.stop - sl.start)
            for yr, v in zip(yrs, data.y[sl]):
                w.writerow([s, int(yr), repr(float(v))])


def read_sites(path) -> SiteTable:
    ids, xy = [], []
    for lineno, (s, x, y) in _read_csv(path, ("site_id", "x_km", "y_km")):
        if s in ids:
            raise ValidationError(f"{path}:{lineno}: duplicate site {s}")
        try:
            pt = (float(x), float(y))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: cannot parse coordinates") from None
        if not all(math.isfinite(c) for c in pt):
            raise ValidationError(f"{path}:{lineno}: non-finite coordinate")
        ids.append(s)
        xy.append(pt)
    if not ids:
        raise ValidationError(f"{path}: no sites")
    return SiteTable(ids, np.array(xy, dtype=float))


def write_sites(path, table: SiteTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "x_km", "y_km"])
        for s, (x, y) in zip(table.ids, table.coords):
            w.writerow([s, repr(float(x)), repr(float(y))])


def write_covariates(path, table: SiteTable, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "covariate"])
        for s, v in zip(table.ids, values):
            w.writerow([s, repr(float(v))])


def read_covariates(path, site_ids) -> np.ndarray:
    vals = {}
    for _, (s, v) in _read_csv(path, ("site_id", "covariate")):
        vals[s] = float(v)
    missing = [s for s in site_ids if s not in vals]
    if missing:
        raise ValidationError(f"{path}: no covariate for site {missing[0]}")
    return np.array([vals[s] for s in site_ids])


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; relative paths are kept as text."""
    cfg = {}
    p = _require(path)
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{p}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ValidationError(f"{p}:{lineno}: empty key")
        cfg[k] = v
    return cfg


def write_config(path, cfg: dict) -> None:
    with open(path, "w") as fh:
        for k, v in cfg.items():
            fh.write(f"{k} = {v}\n")


def toy_config_path() -> Path:
    """Config of the small synthetic dataset shipped with the package."""
    return Path(__file__).parent / "data" / "toy" / "config.txt"
