"""Shared helpers for the experiment scripts."""

import argparse
import json
from pathlib import Path

from tdcr.config import desk_config, load_config
from tdcr.dataset import load_manifest, materialize, standard_recipe


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, help="experiment config JSON (default: desk settings)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    return p


def config(args):
    return load_config(args.config) if args.config else desk_config()


def standard_dataset(cfg, out):
    """Load the standard dataset under ``out`` or generate it."""
    path = Path(out) / "standard"
    if (path / "manifest.jsonl").exists():
        return load_manifest(path)
    ds = cfg.dataset
    return materialize(standard_recipe(cfg.robot, ds.levels, ds.copies, cfg.training.seed),
                       robot=cfg.robot, hysteresis=cfg.hysteresis, M=ds.M, noise_sigma=ds.noise_sigma,
                       seed=cfg.training.seed, out_dir=path, test_count=ds.test_count,
                       val_fraction=ds.val_fraction, recipe="standard", n_raw=ds.n_raw,
                       segments=ds.segments)


def dump(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
