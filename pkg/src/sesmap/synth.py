"""Synthetic city generator with a planted sparse linear model.

Real socioeconomic targets and live audience responses cannot ship with the
code, so recovery tests run against a generated city instead: a square
m x m tiling of rectangular units, a circle grid overlaid by the real
geometry code, per-circle attribute audiences drawn from a seeded RNG, and
a target variable y that is EXACTLY linear in the unit-level shares the
pipeline itself computes from the noiseless fixture. Whatever the model
recovers can therefore be judged against known ground truth.

Also hosts the brute-force Lasso oracle used to verify the solver on tiny
instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audience import (
    AGE_ADULT,
    AGE_ALL,
    CensoredEstimate,
    NoiseModel,
    AudiencePanel,
    TOTAL_ATTRIBUTE,
    average_replicates,
    catalog,
)
from .featurize import TargetVector, normalize, project_to_units
from .geometry import (
    EARTH_RADIUS_M,
    GeoPolygon,
    build_local_frame,
    build_weight_matrix,
    generate_grid,
)

FORMAT_VERSION = 1


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthCity:
    """A generated city: geometry on disk, truth in memory."""

    m: int
    seed: int
    tile_m: float
    radius_m: float
    spacing_m: float
    attribute_names: tuple[str, ...]
    support: tuple[str, ...]
    beta_true: dict[str, float]
    intercept: float
    noise_sigma: float
    sigma_q: float
    floor: bool
    replicates: int
    unit_ids: tuple[str, ...]
    n_circles: int
    units_path: Path
    fixture_path: Path
    target_path: Path
    manifest_path: Path
    shares_true: np.ndarray  # (units, attributes), the shares y was built from
    y: tuple[float, ...]


def _deg(meters: float) -> float:
    return meters / (EARTH_RADIUS_M * np.pi / 180.0)


def _tile_units(m: int, tile_m: float) -> list[GeoPolygon]:
    """m x m rectangular units centred on the equator, ids row-major."""
    half = 0.5 * m * tile_m
    units = []
    for r in range(m):
        for c in range(m):
            x0 = -half + c * tile_m
            y0 = -half + r * tile_m
            lon0, lon1 = _deg(x0), _deg(x0 + tile_m)
            lat0, lat1 = _deg(y0), _deg(y0 + tile_m)
            ring = (
                (lon0, lat0),
                (lon1, lat0),
                (lon1, lat1),
                (lon0, lat1),
                (lon0, lat0),
            )
            units.append(GeoPolygon(id=f"u{r:02d}{c:02d}", exterior=ring))
    return units


def _units_geojson(units: list[GeoPolygon]) -> dict:
    feats = []
    for u in sorted(units, key=lambda g: g.id):
        feats.append(
            {
                "type": "Feature",
                "properties": {"id": u.id},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[lon, lat] for lon, lat in u.exterior]],
                },
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def generate_city(
    out_dir: str | Path,
    m: int = 6,
    seed: int = 0,
    attribute_count: int = 20,
    sparsity: int = 3,
    noise_sigma: float = 0.0,
    sigma_q: float = 0.0,
    floor: bool = True,
    tile_m: float = 1500.0,
    radius_m: float = 1000.0,
    spacing_m: float = 2000.0,
    replicates: int = 3,
    adult_scale: float = 0.6,
    share_range: tuple[float, float] = (0.2, 0.8),
    total_range: tuple[int, int] = (8_000, 20_000),
    intercept: float = 5.0,
) -> SynthCity:
    """Generate a city, write its files, and return the ground truth.

    Writes units.geojson, fixture.jsonl (replay format, `replicates` rows per
    cell with query noise and the platform floor applied), target.csv, and
    manifest.json into out_dir. y is intercept + shares @ beta + eps where
    the shares are what the pipeline computes from the NOISELESS fixture, so
    at sigma_q = 0 the planted relation is exact by construction.
    """
    if m < 3:
        raise SynthError("city needs at least 3 units per side")
    if sparsity < 1 or attribute_count < sparsity:
        raise SynthError("need attribute_count >= sparsity >= 1")
    if noise_sigma < 0 or sigma_q < 0:
        raise SynthError("noise levels must be nonnegative")
    if not 0.0 < share_range[0] < share_range[1] < 1.0:
        raise SynthError("share_range must satisfy 0 < lo < hi < 1")
    if not 0 < total_range[0] <= total_range[1]:
        raise SynthError("total_range must be positive and ordered")
    names = tuple(e.attribute for e in catalog() if e.attribute != TOTAL_ATTRIBUTE)
    if attribute_count > len(names):
        raise SynthError(f"at most {len(names)} attributes available")
    attrs = names[:attribute_count]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    units = _tile_units(m, tile_m)
    frame = build_local_frame(units)
    grid = generate_grid(units, frame, radius=radius_m, spacing=spacing_m)
    weights = build_weight_matrix(grid, units, frame)

    rng = np.random.default_rng(seed)
    circle_ids = [c.id for c in grid.circles]
    totals = rng.integers(total_range[0], total_range[1] + 1, size=len(circle_ids))
    shares = rng.uniform(share_range[0], share_range[1], size=(len(circle_ids), len(attrs)))

    sup_idx = np.sort(rng.choice(attribute_count, size=sparsity, replace=False))
    signs = rng.choice([-1.0, 1.0], size=sparsity)
    mags = rng.uniform(1.0, 2.0, size=sparsity)
    beta_true = {attrs[j]: float(s * g) for j, s, g in zip(sup_idx, signs, mags)}

    # True per-cell MAU before any query noise. ADULT is a fixed fraction of
    # ALL so both age models share the planted structure up to rounding.
    def true_mau(ci: int, attr: str, age: str) -> float:
        base = float(totals[ci]) if attr == TOTAL_ATTRIBUTE else float(totals[ci]) * float(
            shares[ci, attrs.index(attr)]
        )
        return base if age == AGE_ALL else adult_scale * base

    serve = NoiseModel(sigma_q=sigma_q, floor=floor)
    clean = NoiseModel(sigma_q=0.0, floor=floor)
    all_attrs = attrs + (TOTAL_ATTRIBUTE,)

    fixture_path = out / "fixture.jsonl"
    panel = AudiencePanel()
    with open(fixture_path, "w", encoding="utf-8") as fh:
        for ci in circle_ids:
            loc = str(ci)
            for attr in sorted(all_attrs):
                for age in (AGE_ADULT, AGE_ALL):
                    truth = true_mau(ci, attr, age)
                    reps = []
                    for rep in range(1, replicates + 1):
                        key = (loc, attr, age, rep)
                        served = serve.apply(truth, key, seed)
                        reps.append(clean.apply(truth, key, seed))
                        fh.write(
                            json.dumps(
                                {
                                    "location_id": loc,
                                    "attribute": attr,
                                    "age_group": age,
                                    "replicate": rep,
                                    "mau": served,
                                },
                                sort_keys=True,
                            )
                            + "\n"
                        )
                    cell = average_replicates([float(v) for v in reps], expected=replicates)
                    panel.cells[(loc, attr, age)] = CensoredEstimate(
                        mau_censored=cell.mau_censored,
                        replicates_used=cell.replicates_used,
                        all_censored=cell.all_censored,
                        location_id=loc,
                        attribute=attr,
                        age_group=age,
                    )

    unit_panel = project_to_units(panel, weights)
    shares_all = normalize(unit_panel, AGE_ALL)
    unit_ids = shares_all.unit_ids
    col_of = {a: k for k, a in enumerate(shares_all.attributes)}
    x_true = shares_all.values
    y = np.full(len(unit_ids), float(intercept))
    for name, b in beta_true.items():
        y += b * x_true[:, col_of[name]]
    if noise_sigma > 0.0:
        y += noise_sigma * rng.standard_normal(len(unit_ids))

    units_path = out / "units.geojson"
    with open(units_path, "w", encoding="utf-8") as fh:
        json.dump(_units_geojson(units), fh, indent=2, sort_keys=True)
        fh.write("\n")

    target_path = out / "target.csv"
    TargetVector(ids=unit_ids, values=y, name="synthetic_indicator").to_csv(target_path)

    manifest_path = out / "manifest.json"
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "synthetic_city",
        "m": m,
        "seed": seed,
        "tile_m": tile_m,
        "radius_m": radius_m,
        "spacing_m": spacing_m,
        "attribute_count": attribute_count,
        "attributes": list(attrs),
        "sparsity": sparsity,
        "support": [attrs[j] for j in sup_idx],
        "beta_true": {k: beta_true[k] for k in sorted(beta_true)},
        "intercept": intercept,
        "noise_sigma": noise_sigma,
        "sigma_q": sigma_q,
        "floor": floor,
        "replicates": replicates,
        "adult_scale": adult_scale,
        "share_range": list(share_range),
        "total_range": list(total_range),
        "n_units": len(unit_ids),
        "n_circles": len(circle_ids),
        "files": {
            "units": units_path.name,
            "fixture": fixture_path.name,
            "target": target_path.name,
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return SynthCity(
        m=m,
        seed=seed,
        tile_m=tile_m,
        radius_m=radius_m,
        spacing_m=spacing_m,
        attribute_names=attrs,
        support=tuple(attrs[j] for j in sup_idx),
        beta_true=beta_true,
        intercept=float(intercept),
        noise_sigma=noise_sigma,
        sigma_q=sigma_q,
        floor=floor,
        replicates=replicates,
        unit_ids=unit_ids,
        n_circles=len(circle_ids),
        units_path=units_path,
        fixture_path=fixture_path,
        target_path=target_path,
        manifest_path=manifest_path,
        shares_true=x_true,
        y=tuple(float(v) for v in y),
    )


# ---------------------------------------------------------------------------
# brute-force oracle


def oracle_lasso(x: np.ndarray, y: np.ndarray, alpha: float, grid_points: int = 21) -> np.ndarray:
    """Minimise (1/n)||y - Xb||^2 + alpha||b||_1 by dense grid search.

    Deliberately dumb and solver-free: an initial grid over [-B, B]^p (B from
    an OLS bound) followed by refinement passes that re-bracket two coarse
    steps around the incumbent. Only for tiny instances (p <= 3, n <= 8);
    the returned objective lands well inside the 1e-4 tolerance used to
    referee the coordinate-descent solver, even when the OLS bound is loose.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if p > 3:
        raise SynthError("oracle is exponential in p; use p <= 3")
    if n > 8:
        raise SynthError("oracle is meant for tiny instances; use n <= 8")
    if grid_points < 5 or grid_points % 2 == 0:
        raise SynthError("grid_points must be odd and >= 5")
    ols, *_ = np.linalg.lstsq(x, y, rcond=None)
    b = 1.0 + 2.0 * float(np.abs(ols).max(initial=0.0))
    lo = np.full(p, -b)
    hi = np.full(p, b)
    best = np.zeros(p)
    for _ in range(6):
        axes = [np.linspace(lo[j], hi[j], grid_points) for j in range(p)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
        resid = y[None, :] - mesh @ x.T
        obj = (resid**2).sum(axis=1) / n + alpha * np.abs(mesh).sum(axis=1)
        best = mesh[int(np.argmin(obj))]
        step = (hi - lo) / (grid_points - 1)
        lo = best - 2.0 * step
        hi = best + 2.0 * step
    # linspace dust many orders below the grid resolution is not a signal
    best[np.abs(best) < 1e-12 * b] = 0.0
    return best
