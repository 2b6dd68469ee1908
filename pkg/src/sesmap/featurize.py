"""Turn circle-level audience panels into per-unit share design matrices.

Circle counts are spread onto administrative units with the area weights
(MAU_j = sum_i MAU_i * a_ij), normalised by each unit's TOTAL audience for
the same age group, and filtered down to a strictly positive design matrix
aligned with the target indicator.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audience import TOTAL_ATTRIBUTE, AudiencePanel
from .geometry import AreaWeightMatrix

logger = logging.getLogger(__name__)


class FeaturizeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# unit panels


@dataclass
class UnitPanel:
    """Audience totals already keyed by administrative unit."""

    values: dict[tuple[str, str, str], float] = field(default_factory=dict)
    projection_warnings: int = 0

    def unit_ids(self) -> tuple[str, ...]:
        return tuple(sorted({k[0] for k in self.values}))

    def attributes(self, age_group: str) -> tuple[str, ...]:
        return tuple(
            sorted({k[1] for k in self.values if k[2] == age_group and k[1] != TOTAL_ATTRIBUTE})
        )

    def age_groups(self) -> tuple[str, ...]:
        return tuple(sorted({k[2] for k in self.values}))

    def value(self, unit_id: str, attribute: str, age_group: str) -> float:
        return self.values[(unit_id, attribute, age_group)]

    def total(self, unit_id: str, age_group: str) -> float:
        return self.values.get((unit_id, TOTAL_ATTRIBUTE, age_group), 0.0)

    def to_csv(self, path: str | Path) -> None:
        # same column layout as the audience panel so stages can chain
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["location_id", "attribute", "age_group", "mau_mean", "replicates", "all_censored"])
            for key in sorted(self.values):
                wr.writerow([key[0], key[1], key[2], repr(self.values[key]), 0, "false"])

    @classmethod
    def from_csv(cls, path: str | Path) -> "UnitPanel":
        panel = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                panel.values[(row["location_id"], row["attribute"], row["age_group"])] = float(
                    row["mau_mean"]
                )
        return panel


def project_to_units(panel: AudiencePanel, weights: AreaWeightMatrix) -> UnitPanel:
    """MAU_j = sum over circles i of MAU_i * a_ij, per attribute and age.

    Circles present in the weight matrix but absent from the panel count as
    zero; each such hole is tallied in projection_warnings.
    """
    out = UnitPanel()
    combos = sorted({(k[1], k[2]) for k in panel.cells})
    by_unit: dict[str, list[tuple[int, float]]] = {j: [] for j in weights.unit_ids}
    for (i, j), w in weights.entries.items():
        by_unit[j].append((i, w))
    warn = 0
    for attr, age in combos:
        for j in sorted(weights.unit_ids):
            acc = 0.0
            for i, w in by_unit[j]:
                cell = panel.get(str(i), attr, age)
                if cell is None:
                    warn += 1
                    continue
                acc += cell.mau_censored * w
            out.values[(j, attr, age)] = acc
    if warn:
        logger.warning("projection treated %d missing circle cells as zero", warn)
    out.projection_warnings = warn
    return out


def passthrough_units(panel: AudiencePanel) -> UnitPanel:
    """Identity mapping for panels already queried at unit geography."""
    out = UnitPanel()
    for (loc, attr, age), cell in sorted(panel.cells.items()):
        out.values[(loc, attr, age)] = cell.mau_censored
    return out


# ---------------------------------------------------------------------------
# shares


@dataclass
class SharesMatrix:
    """Per-unit attribute shares x_jf = MAU_jf / TOTAL_j for one age group."""

    unit_ids: tuple[str, ...]
    attributes: tuple[str, ...]
    age_group: str
    values: np.ndarray  # shape (n_units, n_attributes)
    zero_total_units: tuple[str, ...] = ()


def normalize(panel: UnitPanel, age_group: str) -> SharesMatrix:
    """Divide each attribute column by the unit's TOTAL for that age group.

    Units with TOTAL = 0 are excluded from the matrix and flagged; nothing
    is divided by zero.
    """
    attrs = panel.attributes(age_group)
    if not attrs:
        raise FeaturizeError(f"no attributes present for age group {age_group!r}")
    keep: list[str] = []
    flagged: list[str] = []
    for j in panel.unit_ids():
        if panel.total(j, age_group) > 0.0:
            keep.append(j)
        else:
            flagged.append(j)
    if flagged:
        logger.warning("%d units have zero TOTAL for %s and are flagged", len(flagged), age_group)
    x = np.zeros((len(keep), len(attrs)))
    for r, j in enumerate(keep):
        t = panel.total(j, age_group)
        for c, attr in enumerate(attrs):
            x[r, c] = panel.values.get((j, attr, age_group), 0.0) / t
    return SharesMatrix(
        unit_ids=tuple(keep),
        attributes=attrs,
        age_group=age_group,
        values=x,
        zero_total_units=tuple(flagged),
    )


# ---------------------------------------------------------------------------
# targets


@dataclass
class TargetVector:
    """The ground-truth indicator per unit, with display metadata."""

    ids: tuple[str, ...]
    values: np.ndarray
    name: str = "indicator"
    unit_of_measure: str = ""
    orientation: str = "higher_is_wealthier"

    def as_dict(self) -> dict[str, float]:
        return {j: float(v) for j, v in zip(self.ids, self.values)}

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        name: str = "indicator",
        unit_of_measure: str = "",
        orientation: str = "higher_is_wealthier",
    ) -> "TargetVector":
        ids: list[str] = []
        vals: list[float] = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                ids.append(row["unit_id"])
                vals.append(float(row["value"]))
        if not ids:
            raise FeaturizeError(f"{path}: empty target file")
        if len(set(ids)) != len(ids):
            raise FeaturizeError(f"{path}: duplicate unit ids in target")
        return cls(
            ids=tuple(ids),
            values=np.asarray(vals, dtype=float),
            name=name,
            unit_of_measure=unit_of_measure,
            orientation=orientation,
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["unit_id", "value"])
            for j, v in zip(self.ids, self.values):
                wr.writerow([j, repr(float(v))])


# ---------------------------------------------------------------------------
# design matrices


@dataclass(frozen=True)
class FilterEvent:
    kind: str  # "unit" or "feature"
    id: str
    rule: str
    iteration: int


@dataclass
class DesignMatrix:
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    age_group: str
    x: np.ndarray
    filter_log: tuple[FilterEvent, ...] = ()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["unit_id", *self.col_ids])
            for r, j in enumerate(self.row_ids):
                wr.writerow([j, *[repr(float(v)) for v in self.x[r]]])

    @classmethod
    def from_csv(cls, path: str | Path, age_group: str = "") -> "DesignMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            cols = tuple(header[1:])
            ids: list[str] = []
            rows: list[list[float]] = []
            for row in rd:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        return cls(row_ids=tuple(ids), col_ids=cols, age_group=age_group, x=np.asarray(rows))

    def save_filter_log(self, path: str | Path) -> None:
        doc = [
            {"kind": e.kind, "id": e.id, "rule": e.rule, "iteration": e.iteration}
            for e in self.filter_log
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _filter_fixed_point(
    x: np.ndarray,
    rows: list[str],
    cols: list[str],
    strict_columns: bool,
    log: list[FilterEvent],
    start_iter: int = 1,
) -> tuple[np.ndarray, list[str], list[str]]:
    it = start_iter
    while True:
        changed = False
        # feature pass: strict drops any column touching a zero, default only
        # drops columns that are zero everywhere
        if x.size:
            if strict_columns:
                bad_cols = np.where((x == 0.0).any(axis=0))[0]
                rule = "zero_entry"
            else:
                bad_cols = np.where((x == 0.0).all(axis=0))[0]
                rule = "zero_everywhere"
            if bad_cols.size:
                for c in bad_cols:
                    log.append(FilterEvent("feature", cols[c], rule, it))
                keep = [c for c in range(x.shape[1]) if c not in set(bad_cols.tolist())]
                cols = [cols[c] for c in keep]
                x = x[:, keep]
                changed = True
        # unit pass: drop rows with any zero left in surviving columns
        if x.size:
            bad_rows = np.where((x == 0.0).any(axis=1))[0]
            if bad_rows.size:
                for r in bad_rows:
                    log.append(FilterEvent("unit", rows[r], "zero_share", it))
                keep = [r for r in range(x.shape[0]) if r not in set(bad_rows.tolist())]
                rows = [rows[r] for r in keep]
                x = x[keep, :]
                changed = True
        if not changed or not x.size:
            return x, rows, cols
        it += 1


def build_design(
    shares: SharesMatrix,
    target: TargetVector,
    strict_columns: bool = False,
) -> tuple[DesignMatrix, TargetVector]:
    """Align shares with the target and filter to a strictly positive matrix.

    Filtering iterates feature and unit passes to a fixed point, logging
    every drop. Fatal if fewer than 3 units or 1 feature survive. With
    strict_columns the feature rule drops any column containing a zero
    (instead of columns zero everywhere); if that changes the surviving
    feature set the difference is logged.
    """
    log: list[FilterEvent] = []
    target_map = target.as_dict()

    for j in shares.zero_total_units:
        log.append(FilterEvent("unit", j, "zero_total", 0))

    rows: list[str] = []
    row_idx: list[int] = []
    for r, j in enumerate(shares.unit_ids):
        if j in target_map:
            rows.append(j)
            row_idx.append(r)
        else:
            log.append(FilterEvent("unit", j, "missing_target", 0))
    x = shares.values[row_idx, :].copy()
    cols = list(shares.attributes)

    x, rows, cols = _filter_fixed_point(x, rows, cols, strict_columns, log)

    if strict_columns:
        ref_log: list[FilterEvent] = []
        x_ref = shares.values[row_idx, :].copy()
        _, _, cols_ref = _filter_fixed_point(
            x_ref, [shares.unit_ids[r] for r in row_idx], list(shares.attributes), False, ref_log
        )
        if set(cols_ref) != set(cols):
            logger.info(
                "strict column rule changed the surviving features: %d vs %d",
                len(cols),
                len(cols_ref),
            )

    if len(rows) < 3:
        raise FeaturizeError(
            f"only {len(rows)} units survive filtering for {shares.age_group}; need at least 3"
        )
    if len(cols) < 1:
        raise FeaturizeError(f"no features survive filtering for {shares.age_group}")
    assert (x > 0.0).all()

    design = DesignMatrix(
        row_ids=tuple(rows),
        col_ids=tuple(cols),
        age_group=shares.age_group,
        x=x,
        filter_log=tuple(log),
    )
    y = np.asarray([target_map[j] for j in rows], dtype=float)
    aligned = TargetVector(
        ids=tuple(rows),
        values=y,
        name=target.name,
        unit_of_measure=target.unit_of_measure,
        orientation=target.orientation,
    )
    return design, aligned
