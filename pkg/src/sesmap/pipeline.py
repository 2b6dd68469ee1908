"""Batch driver: config file in, a directory of reproducible artifacts out.

Stages run in a fixed order (grid, fetch, project, featurize, fit,
evaluate, report), each writing its files as soon as it finishes so a
failing run leaves every upstream artifact and log on disk. All outputs
are plain text with deterministic formatting: rerunning the same config,
seed, and fixtures reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import audience, featurize, geometry, render, regress
from .audience import AGE_ADULT, AGE_ALL, AGE_GROUPS, NoiseModel, ReplayClient
from .featurize import TargetVector

logger = logging.getLogger(__name__)

STAGES = ("grid", "fetch", "project", "featurize", "fit", "evaluate", "report")


class PipelineError(RuntimeError):
    """A stage failed; the stage name travels with the message."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {super().__str__()}"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """One run, fully specified. Paths are used exactly as stored here.

    `attributes` limits the queried catalog entries (None means the whole
    catalog); `query_geography` picks between the circle grid with areal
    projection ("circles") and direct per-unit queries ("units"), in which
    case fixture location ids must equal unit ids and no weights exist.
    """

    city: str
    boundary_path: str
    target_path: str
    fixture_path: str
    output_dir: str
    indicator_name: str = "indicator"
    indicator_unit: str = ""
    indicator_orientation: str = "higher_is_wealthier"
    query_geography: str = "circles"
    attributes: tuple[str, ...] | None = None
    radius_m: float = 1000.0
    spacing_m: float | None = None
    lattice: str = "square"
    segments: int = 64
    replicates: int = 3
    unknown_key: str = "error"
    client_noise_sigma: float = 0.0
    age_models: tuple[str, ...] = (AGE_ALL, AGE_ADULT)
    alpha_count: int = 100
    alpha_ratio: float = 1e-4
    cv_folds: int = 5
    cv_repeats: int = 30
    seed: int = 0
    column_rule: str = "default"
    coefficient_source: str = "lasso"
    report_attribute: str = "frequent_travelers"
    report_age: str | None = None
    scale_mode: str = "linear"

    def resolved_report_age(self) -> str:
        if self.report_age is not None:
            return self.report_age
        return AGE_ADULT if AGE_ADULT in self.age_models else self.age_models[0]

    def as_dict(self) -> dict:
        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            doc[f.name] = list(v) if isinstance(v, tuple) else v
        return doc


_REQUIRED_KEYS = ("city", "boundary_path", "target_path", "fixture_path")
_PATH_KEYS = ("boundary_path", "target_path", "fixture_path", "output_dir")


def load_config(
    path: str | Path, out_override: str | None = None, seed_override: int | None = None
) -> RunConfig:
    """Read a JSON run config; relative paths resolve against the file's dir.

    Unknown keys are fatal (a typoed option must not silently fall back to
    a default). `output_dir` may come from the file or the override; the
    override wins when both are present.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise PipelineError("config", f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PipelineError("config", f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PipelineError("config", "config root must be a JSON object")

    allowed = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise PipelineError("config", f"unknown config keys: {unknown}")
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise PipelineError("config", f"missing required config keys: {missing}")
    if out_override is None and "output_dir" not in doc:
        raise PipelineError("config", "output_dir missing: set it in the config or pass --out")

    base = path.parent
    for key in _PATH_KEYS:
        if key in doc and not Path(doc[key]).is_absolute():
            doc[key] = str(base / doc[key])
    for key in ("attributes", "age_models"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(str(v) for v in doc[key])
    if out_override is not None:
        doc["output_dir"] = out_override
    if seed_override is not None:
        doc["seed"] = seed_override
    try:
        return RunConfig(**doc)
    except TypeError as exc:
        raise PipelineError("config", f"bad config value: {exc}") from exc


def validate_config(cfg: RunConfig) -> None:
    def fail(msg: str):
        raise PipelineError("config", msg)

    for key in ("boundary_path", "target_path", "fixture_path"):
        p = getattr(cfg, key)
        if not Path(p).is_file():
            fail(f"{key} does not exist: {p}")
    if cfg.radius_m <= 0.0:
        fail("radius_m must be positive")
    if cfg.spacing_m is not None and cfg.spacing_m <= 0.0:
        fail("spacing_m must be positive")
    if cfg.query_geography not in ("circles", "units"):
        fail(f"query_geography must be 'circles' or 'units', got {cfg.query_geography!r}")
    if not cfg.age_models:
        fail("at least one age model is required")
    bad_ages = [a for a in cfg.age_models if a not in AGE_GROUPS]
    if bad_ages:
        fail(f"unknown age models {bad_ages}; expected subset of {list(AGE_GROUPS)}")
    if len(set(cfg.age_models)) != len(cfg.age_models):
        fail("duplicate age models")
    if cfg.alpha_count < 2:
        fail("alpha_count must be at least 2")
    if not 0.0 < cfg.alpha_ratio < 1.0:
        fail("alpha_ratio must lie in (0, 1)")
    if cfg.cv_folds < 2 or cfg.cv_repeats < 1:
        fail("cv_folds must be >= 2 and cv_repeats >= 1")
    if cfg.replicates < 1:
        fail("replicates must be >= 1")
    if cfg.segments < 8:
        fail("segments must be >= 8")
    if cfg.client_noise_sigma < 0.0:
        fail("client_noise_sigma must be >= 0")
    if cfg.unknown_key not in ("error", "floor"):
        fail(f"unknown_key must be 'error' or 'floor', got {cfg.unknown_key!r}")
    if cfg.column_rule not in ("default", "strict"):
        fail(f"column_rule must be 'default' or 'strict', got {cfg.column_rule!r}")
    if cfg.coefficient_source not in ("lasso", "ols"):
        fail(f"coefficient_source must be 'lasso' or 'ols', got {cfg.coefficient_source!r}")
    if cfg.scale_mode not in render.SCALE_MODES:
        fail(f"scale_mode must be one of {render.SCALE_MODES}, got {cfg.scale_mode!r}")
    if cfg.report_age is not None and cfg.report_age not in cfg.age_models:
        fail(f"report_age {cfg.report_age!r} is not among the configured age models")
    try:
        report_entries = audience.catalog_subset([cfg.report_attribute])
    except audience.AudienceError as exc:
        report_entries = ()
        fail(str(exc))
    if not report_entries:
        fail(f"report_attribute {cfg.report_attribute!r} is not a queryable attribute")
    if cfg.attributes is not None:
        try:
            entries = audience.catalog_subset(cfg.attributes)
        except audience.AudienceError as exc:
            fail(str(exc))
        if not entries:
            fail("attributes list selects nothing from the catalog")
        if cfg.report_attribute not in {e.attribute for e in entries}:
            fail(f"report_attribute {cfg.report_attribute!r} is not among the queried attributes")


# ---------------------------------------------------------------------------
# run state


@dataclass
class ModelResult:
    """Fit and evaluation products for one age model."""

    model_id: str
    design: featurize.DesignMatrix
    y: np.ndarray
    alpha_max: float
    alpha: float
    cv_table: tuple[tuple[float, float, int], ...]
    fit: regress.LassoFit
    ols: regress.OlsFit
    selected_names: tuple[str, ...]
    normalized: tuple[tuple[str, float], ...]
    r2_loocv: float | None = None
    r2_loocv_nested: float | None = None
    preds_loocv: np.ndarray | None = None
    preds_loocv_nested: np.ndarray | None = None


@dataclass
class RunState:
    out: Path
    units: list[geometry.GeoPolygon] = field(default_factory=list)
    frame: geometry.LocalFrame | None = None
    grid: geometry.CircleGrid | None = None
    weights: geometry.AreaWeightMatrix | None = None
    panel: audience.AudiencePanel | None = None
    unit_panel: featurize.UnitPanel | None = None
    target: TargetVector | None = None
    designs: dict[str, tuple[featurize.DesignMatrix, TargetVector]] = field(default_factory=dict)
    models: dict[str, ModelResult] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)

    def record(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out / name


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


# ---------------------------------------------------------------------------
# stages


def _stage_grid(cfg: RunConfig, st: RunState) -> None:
    st.units = geometry.load_units_geojson(cfg.boundary_path)
    st.frame = geometry.build_local_frame(st.units)
    if cfg.query_geography != "circles":
        logger.info("unit-level query geography: no circle grid or weights")
        return
    st.grid = geometry.generate_grid(
        st.units, st.frame, radius=cfg.radius_m, spacing=cfg.spacing_m, lattice=cfg.lattice
    )
    geometry.save_grid_geojson(st.grid, st.record("grid.geojson"))
    st.weights = geometry.build_weight_matrix(st.grid, st.units, st.frame, segments=cfg.segments)
    geometry.save_weights_csv(st.weights, st.record("weights.csv"), st.frame)
    st.artifacts.append("weights.json")


def _stage_fetch(cfg: RunConfig, st: RunState) -> None:
    entries = audience.catalog_subset(cfg.attributes) if cfg.attributes else audience.catalog()
    noise = NoiseModel(cfg.client_noise_sigma, floor=True) if cfg.client_noise_sigma > 0 else None
    client = ReplayClient(
        cfg.fixture_path, unknown_key=cfg.unknown_key, noise=noise, seed=cfg.seed
    )
    if cfg.query_geography == "circles":
        locations = st.grid
    else:
        # multi-part units share an id; query each id once
        locations = sorted({u.id for u in st.units})
    ages = tuple(sorted(set(cfg.age_models)))
    st.panel = audience.fetch_panel(
        locations, entries, client, replicates=cfg.replicates, age_groups=ages
    )
    st.panel.to_csv(st.record("panel.csv"))


def _stage_project(cfg: RunConfig, st: RunState) -> None:
    if cfg.query_geography == "circles":
        st.unit_panel = featurize.project_to_units(st.panel, st.weights)
    else:
        st.unit_panel = featurize.passthrough_units(st.panel)
    st.unit_panel.to_csv(st.record("unit_panel.csv"))


def _stage_featurize(cfg: RunConfig, st: RunState) -> None:
    st.target = TargetVector.from_csv(
        cfg.target_path,
        name=cfg.indicator_name,
        unit_of_measure=cfg.indicator_unit,
        orientation=cfg.indicator_orientation,
    )
    for age in cfg.age_models:
        shares = featurize.normalize(st.unit_panel, age)
        design, aligned = featurize.build_design(
            shares, st.target, strict_columns=cfg.column_rule == "strict"
        )
        st.designs[age] = (design, aligned)
        design.to_csv(st.record(f"design_{age}.csv"))
        design.save_filter_log(st.record(f"filterlog_{age}.json"))


def _stage_fit(cfg: RunConfig, st: RunState) -> None:
    for age in cfg.age_models:
        design, aligned = st.designs[age]
        x, y = design.x, aligned.values
        grid = regress.alpha_grid(x, y, count=cfg.alpha_count, ratio=cfg.alpha_ratio)
        plan = regress.make_cv_plan(len(y), folds=cfg.cv_folds, repeats=cfg.cv_repeats, seed=cfg.seed)
        alpha_star, cv_table = regress.select_alpha(x, y, grid, plan)
        fit = regress.lasso_fit(x, y, alpha_star)
        support = fit.support
        if not fit.converged:
            logger.warning("model %s: lasso did not certify convergence at alpha=%g", age, alpha_star)
        if len(support) == 0:
            logger.warning("model %s selected nothing at alpha=%g; null model", age, alpha_star)
            ols = regress.OlsFit(coef=np.zeros(0), intercept=float(y.mean()), used_ridge=False)
        else:
            ols = regress.ols_refit(x[:, support], y)
        names = tuple(design.col_ids[j] for j in support)
        beta_map = {design.col_ids[j]: float(fit.beta[j]) for j in support}
        ols_map = dict(zip(names, (float(c) for c in ols.coef)))
        source = beta_map if cfg.coefficient_source == "lasso" else ols_map
        normalized = regress.normalized_coefficients(source) if source else ()
        st.models[age] = ModelResult(
            model_id=age,
            design=design,
            y=y,
            alpha_max=grid.alpha_max,
            alpha=alpha_star,
            cv_table=cv_table,
            fit=fit,
            ols=ols,
            selected_names=names,
            normalized=normalized,
        )
        _write_model_json(cfg, st, st.models[age])
        _write_coefficients_csv(cfg, st, st.models[age])


def _write_model_json(cfg: RunConfig, st: RunState, m: ModelResult) -> None:
    cols = m.design.col_ids
    doc = {
        "model": m.model_id,
        "alpha": m.alpha,
        "alpha_max": m.alpha_max,
        "intercept": m.fit.intercept,
        "coefficients": {n: float(m.fit.beta[j]) for j, n in enumerate(cols) if m.fit.beta[j] != 0.0},
        "ols_intercept": m.ols.intercept,
        "ols_coefficients": dict(zip(m.selected_names, (float(c) for c in m.ols.coef))),
        "ols_used_ridge": m.ols.used_ridge,
        "selected": list(m.selected_names),
        "n_units": len(m.y),
        "features_before_selection": len(cols),
        "converged": m.fit.converged,
        "seed": cfg.seed,
        "coefficient_source": cfg.coefficient_source,
        "cv_table": [[a, r, u] for a, r, u in m.cv_table],
        "standardization": {
            "column_mean": {n: float(v) for n, v in zip(cols, m.fit.column_mean)},
            "column_scale": {n: float(v) for n, v in zip(cols, m.fit.column_scale)},
            "y_mean": m.fit.y_mean,
        },
    }
    _write_json(st.record(f"model_{m.model_id}.json"), doc)


def _write_coefficients_csv(cfg: RunConfig, st: RunState, m: ModelResult) -> None:
    # the raw column echoes whichever coefficients were normalized
    if cfg.coefficient_source == "lasso":
        raw = dict(zip(m.selected_names, (float(m.fit.beta[j]) for j in m.fit.support)))
    else:
        raw = dict(zip(m.selected_names, (float(c) for c in m.ols.coef)))
    with open(st.record(f"coefficients_{m.model_id}.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["variable", "normalized_coefficient", "coefficient"])
        for name, value in m.normalized:
            wr.writerow([name, repr(value), repr(raw[name])])


def _stage_evaluate(cfg: RunConfig, st: RunState) -> None:
    for age in cfg.age_models:
        m = st.models[age]
        x = m.design.x
        r2f, pf = regress.loocv_r2(x, m.y, m.alpha, m.fit.support, policy="fixed")
        r2n, pn = regress.loocv_r2(x, m.y, m.alpha, m.fit.support, policy="nested")
        m.r2_loocv, m.preds_loocv = r2f, pf
        m.r2_loocv_nested, m.preds_loocv_nested = r2n, pn
        with open(st.record(f"eval_{age}.csv"), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["unit_id", "y", "pred_loocv", "pred_loocv_nested"])
            for j, uid in enumerate(m.design.row_ids):
                wr.writerow([uid, repr(float(m.y[j])), repr(float(pf[j])), repr(float(pn[j]))])


def _stage_report(cfg: RunConfig, st: RunState) -> None:
    truth = st.target.as_dict()
    title = f"{cfg.city}: {cfg.indicator_name}"
    svg = render.render_choropleth(
        st.units, truth, frame=st.frame, scale_mode=cfg.scale_mode, title=title
    )
    st.record("map_truth.svg").write_text(svg, encoding="utf-8")
    _write_json(st.record("map_truth.geojson"), render.choropleth_geojson(st.units, truth))

    for age in cfg.age_models:
        m = st.models[age]
        preds = {uid: float(v) for uid, v in zip(m.design.row_ids, m.preds_loocv)}
        svg = render.render_choropleth(
            st.units,
            preds,
            frame=st.frame,
            scale_mode=cfg.scale_mode,
            title=f"{cfg.city}: {cfg.indicator_name} predicted ({age})",
        )
        st.record(f"map_pred_{age}.svg").write_text(svg, encoding="utf-8")
        _write_json(
            st.record(f"map_pred_{age}.geojson"), render.choropleth_geojson(st.units, preds)
        )

    if cfg.query_geography == "circles":
        _write_circle_map(cfg, st)

    _write_json(st.record("summary.json"), _summary_doc(cfg, st))
    manifest = {
        "config": cfg.as_dict(),
        "artifacts": sorted(st.artifacts + ["manifest.json"]),
        "stages": list(STAGES),
    }
    _write_json(st.record("manifest.json"), manifest)


def _write_circle_map(cfg: RunConfig, st: RunState) -> None:
    age = cfg.resolved_report_age()
    attr = cfg.report_attribute
    values: dict[int, float] = {}
    for c in st.grid.circles:
        loc = str(c.id)
        cell = st.panel.get(loc, attr, age)
        total = st.panel.get(loc, audience.TOTAL_ATTRIBUTE, age)
        if cell is None or total is None or total.mau_censored <= 0.0:
            continue
        values[c.id] = cell.mau_censored / total.mau_censored
    if not values:
        logger.warning("circle map for %r (%s) has no positive shares; skipped", attr, age)
        return
    name = f"map_circles_{_slug(attr)}"
    svg = render.render_circle_map(
        st.grid,
        values,
        units=st.units,
        scale_mode=cfg.scale_mode,
        title=f"{cfg.city}: share of {attr} ({age})",
    )
    st.record(f"{name}.svg").write_text(svg, encoding="utf-8")
    _write_json(
        st.record(f"{name}.geojson"),
        render.circle_map_geojson(st.grid, values, value_name="share"),
    )


def _summary_doc(cfg: RunConfig, st: RunState) -> dict:
    models = {}
    for age in cfg.age_models:
        m = st.models[age]
        models[age] = {
            "n_units": len(m.y),
            "features": len(m.design.col_ids),
            "selected": len(m.selected_names),
            "alpha": m.alpha,
            "r2_loocv": m.r2_loocv,
            "r2_loocv_nested": m.r2_loocv_nested,
            "converged": m.fit.converged,
        }
    doc = {
        "city": cfg.city,
        "indicator": cfg.indicator_name,
        "seed": cfg.seed,
        "query_geography": cfg.query_geography,
        "models": models,
        "adult_vs_all": None,
    }
    if AGE_ALL in st.models and AGE_ADULT in st.models:
        r2a = st.models[AGE_ALL].r2_loocv
        r2d = st.models[AGE_ADULT].r2_loocv
        doc["adult_vs_all"] = {
            "r2_all": r2a,
            "r2_adult": r2d,
            "absolute_delta": r2d - r2a,
            "relative_delta": (r2d - r2a) / abs(r2a) if r2a != 0.0 else None,
        }
    return doc


_STAGE_FUNCS = {
    "grid": _stage_grid,
    "fetch": _stage_fetch,
    "project": _stage_project,
    "featurize": _stage_featurize,
    "fit": _stage_fit,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}


def run_pipeline(cfg: RunConfig, until: str = "report") -> Path:
    """Execute stages through `until` (inclusive) and return the run dir.

    Any stage failure is re-raised as PipelineError carrying the stage
    name; files written by earlier stages stay on disk for post-mortems.
    """
    if until not in STAGES:
        raise PipelineError("config", f"unknown stage {until!r}; expected one of {list(STAGES)}")
    validate_config(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    st = RunState(out=out)
    for name in STAGES[: STAGES.index(until) + 1]:
        logger.info("stage %s", name)
        try:
            _STAGE_FUNCS[name](cfg, st)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, str(exc)) from exc
    return out
