"""Audience catalog, censoring rules, and the replayable query client.

The ad platform reports monthly active users (MAU) for a location and a
targeting attribute, never below 1000: anything under the floor comes back
as exactly 1000. We therefore treat a reported 1000 as "unknown, possibly
zero" and replace it with 0 before averaging the repeated queries.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PLATFORM_FLOOR = 1000

AGE_ALL = "ALL"
AGE_ADULT = "ADULT"
AGE_GROUPS = (AGE_ALL, AGE_ADULT)
# minimum platform age, and the cutoff used for the adult-only panels
AGE_MIN_YEARS = {AGE_ALL: 13, AGE_ADULT: 26}

TOTAL_ATTRIBUTE = "total"

DEFAULT_REPLICATES = 3

# Replay timestamps are fixed so artifact bytes never depend on wall time.
REPLAY_TIMESTAMP = "1970-01-01T00:00:00Z"


class AudienceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class CatalogEntry:
    """One queryable audience attribute and its category."""

    attribute: str
    category: str

    def at(self, age_group: str) -> "TargetingSpec":
        return TargetingSpec(attribute=self.attribute, category=self.category, age_group=age_group)


_CATALOG_ROWS: tuple[tuple[str, str], ...] = (
    ("males", "gender"),
    ("females", "gender"),
    ("single", "marital_status"),
    ("engaged", "marital_status"),
    ("married", "marital_status"),
    ("civil_union", "marital_status"),
    ("high_school_grad", "education"),
    ("college_grad", "education"),
    ("away_from_hometown", "travel"),
    ("away_from_family", "travel"),
    ("frequent_international_travelers", "travel"),
    ("frequent_travelers", "travel"),
    ("returned_from_travels_1_week_ago", "travel"),
    ("returned_from_travels_2_weeks_ago", "travel"),
    ("expats", "travel"),
    ("gambling", "interests"),
    ("casino", "interests"),
    ("cooking", "interests"),
    ("restaurants", "interests"),
    ("fast_food", "interests"),
    ("fitness_and_wellness", "interests"),
    ("lgbt_community", "interests"),
    ("homosexuality", "interests"),
    ("same_sex_marriage", "interests"),
    ("catholic_church", "religion"),
    ("buddhism", "religion"),
    ("atheism", "religion"),
    ("ios", "technology"),
    ("android", "technology"),
    ("mac", "technology"),
    ("windows", "technology"),
    ("iphone_x", "technology"),
    ("iphone_8", "technology"),
    ("iphone_8_plus", "technology"),
    ("galaxy_s8", "technology"),
    ("galaxy_s9", "technology"),
    ("samsung_android", "technology"),
    ("huawei", "technology"),
    ("oppo", "technology"),
    ("older_devices", "technology"),
    ("smartphone_and_tablet", "technology"),
    ("tablet", "technology"),
    ("technology_early_adopters", "technology"),
    ("network_2g", "connectivity"),
    ("network_3g", "connectivity"),
    ("network_4g", "connectivity"),
    ("wifi", "connectivity"),
)


def catalog() -> tuple[CatalogEntry, ...]:
    """The 47 queryable attributes plus the TOTAL pseudo-attribute.

    Multi-device families (iPhone X/8/8 Plus, Galaxy S8/S9, 2G/3G/4G) are
    individual attributes; downstream models may select a single device.
    """
    rows = tuple(CatalogEntry(attribute=a, category=c) for a, c in _CATALOG_ROWS)
    return rows + (CatalogEntry(attribute=TOTAL_ATTRIBUTE, category=TOTAL_ATTRIBUTE),)


def catalog_subset(names) -> tuple[CatalogEntry, ...]:
    """Catalog entries for the given attribute names, in catalog order.

    TOTAL is excluded (it is always fetched anyway); unknown names raise.
    """
    wanted = set(names)
    known = {a for a, _ in _CATALOG_ROWS}
    unknown = wanted - known - {TOTAL_ATTRIBUTE}
    if unknown:
        raise AudienceError(f"attributes not in the catalog: {sorted(unknown)}")
    return tuple(
        CatalogEntry(attribute=a, category=c) for a, c in _CATALOG_ROWS if a in wanted
    )


_CATALOG_KEYS = frozenset(a for a, _ in _CATALOG_ROWS) | {TOTAL_ATTRIBUTE}


@dataclass(frozen=True)
class TargetingSpec:
    """A concrete audience query: attribute at one age group, home residence."""

    attribute: str
    category: str
    age_group: str
    residence: str = "home"

    def __post_init__(self) -> None:
        if self.age_group not in AGE_GROUPS:
            raise AudienceError(f"unknown age group {self.age_group!r}")
        if self.attribute not in _CATALOG_KEYS:
            raise AudienceError(f"attribute {self.attribute!r} is not in the catalog")


# ---------------------------------------------------------------------------
# censoring


def censor(raw_mau: float) -> float:
    """Map a reported MAU to its censored value: the 1000 floor becomes 0."""
    if raw_mau < 0:
        raise AudienceError(f"negative MAU {raw_mau!r}")
    return 0.0 if raw_mau == PLATFORM_FLOOR else float(raw_mau)


@dataclass(frozen=True)
class CensoredEstimate:
    mau_censored: float
    replicates_used: int
    all_censored: bool
    location_id: str | None = None
    attribute: str | None = None
    age_group: str | None = None


def average_replicates(replicates: list[float], expected: int = DEFAULT_REPLICATES) -> CensoredEstimate:
    """Censor each replicate, then average.

    all_censored marks cells where every replicate sat at the floor; those
    features carry no signal for the location and are dropped later.
    """
    if not replicates:
        raise AudienceError("no replicates to average")
    if len(replicates) > expected:
        raise AudienceError(f"got {len(replicates)} replicates, expected at most {expected}")
    vals = [censor(r) for r in replicates]
    return CensoredEstimate(
        mau_censored=sum(vals) / len(vals),
        replicates_used=len(vals),
        all_censored=all(r == PLATFORM_FLOOR for r in replicates),
    )


# ---------------------------------------------------------------------------
# replay client


@dataclass(frozen=True)
class RawEstimate:
    location_id: str
    attribute: str
    age_group: str
    replicate: int
    mau: int
    retrieved_at: str = REPLAY_TIMESTAMP
    source: str = "replay-fixture"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative lognormal query noise, optionally floored like the platform."""

    sigma_q: float = 0.0
    floor: bool = False

    def apply(self, mau: float, key: tuple, seed: int) -> int:
        value = float(mau)
        if self.sigma_q > 0.0:
            digest = hashlib.sha256(repr((seed,) + key).encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            value *= float(np.exp(self.sigma_q * rng.standard_normal()))
        out = int(round(value))
        if self.floor and out < PLATFORM_FLOOR:
            out = PLATFORM_FLOOR
        return out


class _TokenBucket:
    """Rate limiter over a simulated clock; one token per query."""

    def __init__(self, rate_per_s: float) -> None:
        self.rate = rate_per_s
        self.tokens = 1.0
        self.clock = 0.0

    def acquire(self) -> float:
        if self.tokens < 1.0:
            self.clock += (1.0 - self.tokens) / self.rate
            self.tokens = 1.0
        self.tokens -= 1.0
        return self.clock


class ReplayClient:
    """Serves recorded audience queries from a JSON Lines fixture.

    Each fixture line holds {location_id, attribute, age_group, replicate,
    mau}. Unknown keys either raise (policy "error") or return the platform
    floor (policy "floor"). An optional NoiseModel perturbs served values
    deterministically per key and seed.
    """

    def __init__(
        self,
        fixture_path: str | Path,
        rate_limit_qps: float | None = None,
        retry: RetryPolicy = RetryPolicy(),
        unknown_key: str = "error",
        noise: NoiseModel | None = None,
        seed: int = 0,
    ) -> None:
        if unknown_key not in ("error", "floor"):
            raise AudienceError(f"unknown_key policy {unknown_key!r} not recognised")
        self.unknown_key = unknown_key
        self.retry = retry
        self.noise = noise
        self.seed = seed
        self._bucket = _TokenBucket(rate_limit_qps) if rate_limit_qps else None
        self._records: dict[tuple[str, str, str, int], int] = {}
        with open(fixture_path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    key = (
                        str(rec["location_id"]),
                        str(rec["attribute"]),
                        str(rec["age_group"]),
                        int(rec["replicate"]),
                    )
                    self._records[key] = int(rec["mau"])
                except (KeyError, ValueError, TypeError) as exc:
                    raise AudienceError(f"{fixture_path}: bad fixture line {n}: {exc}") from exc

    @property
    def elapsed(self) -> float:
        return self._bucket.clock if self._bucket else 0.0

    def query(self, location_id: str, attribute: str, age_group: str, replicate: int) -> RawEstimate:
        if self._bucket is not None:
            self._bucket.acquire()
        key = (location_id, attribute, age_group, replicate)
        if key not in self._records:
            if self.unknown_key == "floor":
                return RawEstimate(*key, mau=PLATFORM_FLOOR)
            raise KeyError(f"no fixture record for {key}")
        mau = self._records[key]
        if self.noise is not None:
            mau = self.noise.apply(mau, key, self.seed)
        return RawEstimate(*key, mau=mau)


# ---------------------------------------------------------------------------
# panels


@dataclass
class AudiencePanel:
    """Censored MAU per (location, attribute, age group), including TOTAL."""

    cells: dict[tuple[str, str, str], CensoredEstimate] = field(default_factory=dict)
    missing: list[tuple[str, str, str]] = field(default_factory=list)

    def locations(self) -> tuple[str, ...]:
        return tuple(sorted({k[0] for k in self.cells}))

    def attributes(self, age_group: str | None = None) -> tuple[str, ...]:
        return tuple(
            sorted(
                {
                    k[1]
                    for k in self.cells
                    if (age_group is None or k[2] == age_group) and k[1] != TOTAL_ATTRIBUTE
                }
            )
        )

    def age_groups(self) -> tuple[str, ...]:
        return tuple(sorted({k[2] for k in self.cells}))

    def value(self, location_id: str, attribute: str, age_group: str) -> float:
        return self.cells[(location_id, attribute, age_group)].mau_censored

    def get(self, location_id: str, attribute: str, age_group: str) -> CensoredEstimate | None:
        return self.cells.get((location_id, attribute, age_group))

    def total(self, location_id: str, age_group: str) -> float:
        return self.value(location_id, TOTAL_ATTRIBUTE, age_group)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["location_id", "attribute", "age_group", "mau_mean", "replicates", "all_censored"])
            for key in sorted(self.cells):
                est = self.cells[key]
                wr.writerow(
                    [
                        key[0],
                        key[1],
                        key[2],
                        repr(est.mau_censored),
                        est.replicates_used,
                        "true" if est.all_censored else "false",
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "AudiencePanel":
        panel = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["location_id"], row["attribute"], row["age_group"])
                panel.cells[key] = CensoredEstimate(
                    mau_censored=float(row["mau_mean"]),
                    replicates_used=int(row["replicates"]),
                    all_censored=row["all_censored"] == "true",
                    location_id=key[0],
                    attribute=key[1],
                    age_group=key[2],
                )
        return panel


def fetch_panel(
    locations,
    entries: tuple[CatalogEntry, ...] | list[CatalogEntry],
    client: ReplayClient,
    replicates: int = DEFAULT_REPLICATES,
    age_groups: tuple[str, ...] = AGE_GROUPS,
) -> AudiencePanel:
    """Query every (location, attribute, age group) cell R times and average.

    `locations` is an iterable of location ids or a CircleGrid. TOTAL is
    always fetched for each age group so shares can be formed later. A cell
    whose queries all fail is recorded under `missing`, not fatal.
    """
    if hasattr(locations, "circles"):
        loc_ids = [str(c.id) for c in locations.circles]
    else:
        loc_ids = [str(x) for x in locations]
    attrs = {e.attribute for e in entries}
    attrs.add(TOTAL_ATTRIBUTE)

    panel = AudiencePanel()
    for loc in sorted(loc_ids):
        for attr in sorted(attrs):
            for age in sorted(age_groups):
                got: list[float] = []
                for rep in range(1, replicates + 1):
                    est = None
                    for _ in range(max(1, client.retry.max_attempts)):
                        try:
                            est = client.query(loc, attr, age, rep)
                            break
                        except KeyError:
                            est = None
                            break  # replay misses are deterministic, no point retrying
                    if est is not None:
                        got.append(est.mau)
                if not got:
                    panel.missing.append((loc, attr, age))
                    continue
                cell = average_replicates(got, expected=replicates)
                panel.cells[(loc, attr, age)] = replace(
                    cell, location_id=loc, attribute=attr, age_group=age
                )
    if panel.missing:
        logger.warning("%d panel cells missing after fetch", len(panel.missing))
    return panel
