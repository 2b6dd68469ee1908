"""Command line front end: staged pipeline runs and synthetic city generation."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import synth
from .audience import AudienceError
from .featurize import FeaturizeError
from .geometry import GeometryError
from .pipeline import STAGES, PipelineError, load_config, run_pipeline
from .regress import RegressError
from .render import RenderError


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sesmap",
        description="Map urban socioeconomic indicators from advertising audience estimates.",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add_stage(name: str, text: str) -> None:
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="path to the JSON run config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the config output directory")

    for name in STAGES:
        add_stage(name, f"run the pipeline through its {name} stage")
    add_stage("run", "run every stage and write the full artifact set")

    sp = sub.add_parser("synth", help="generate a synthetic city with a planted sparse model")
    sp.add_argument("--out", required=True, help="directory to write the city into")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=6, help="units per side of the square city")
    sp.add_argument("--attribute-count", type=int, default=20)
    sp.add_argument("--sparsity", type=int, default=3, help="number of truly active attributes")
    sp.add_argument("--noise-sigma", type=float, default=0.0, help="sd of additive target noise")
    sp.add_argument("--sigma-q", type=float, default=0.0, help="per-query lognormal noise scale")
    sp.add_argument("--no-floor", action="store_true", help="disable the reporting floor")
    sp.add_argument("--tile-m", type=float, default=1500.0)
    sp.add_argument("--radius-m", type=float, default=1000.0)
    sp.add_argument("--spacing-m", type=float, default=2000.0)
    sp.add_argument("--replicates", type=int, default=3)
    return p


def _cmd_synth(args: argparse.Namespace) -> int:
    city = synth.generate_city(
        args.out,
        m=args.size,
        seed=args.seed,
        attribute_count=args.attribute_count,
        sparsity=args.sparsity,
        noise_sigma=args.noise_sigma,
        sigma_q=args.sigma_q,
        floor=not args.no_floor,
        tile_m=args.tile_m,
        radius_m=args.radius_m,
        spacing_m=args.spacing_m,
        replicates=args.replicates,
    )
    # a ready-to-run config sits next to the generated files; paths are
    # relative so the directory can be moved wholesale
    cfg_doc = {
        "city": f"synthetic_{args.seed}",
        "boundary_path": city.units_path.name,
        "target_path": city.target_path.name,
        "fixture_path": city.fixture_path.name,
        "output_dir": "run",
        "indicator_name": "synthetic_indicator",
        "attributes": list(city.attribute_names),
        "radius_m": city.radius_m,
        "spacing_m": city.spacing_m,
        "replicates": city.replicates,
        "seed": args.seed,
    }
    cfg_path = Path(args.out) / "config.json"
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(cfg_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(cfg_path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        cfg = load_config(args.config, out_override=args.out, seed_override=args.seed)
        until = "report" if args.command == "run" else args.command
        out = run_pipeline(cfg, until=until)
        print(out)
        return 0
    except PipelineError as exc:
        print(f"sesmap: {exc}", file=sys.stderr)
        return 1
    except (
        AudienceError,
        FeaturizeError,
        GeometryError,
        RegressError,
        RenderError,
        synth.SynthError,
        OSError,
    ) as exc:
        print(f"sesmap: [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
