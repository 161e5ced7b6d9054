"""Command-line surface: dataset / attack / eval / sweep / plot.

Every command that produces a run directory drops a provenance.json there
(config snapshot, applied overrides, seed, code version, output digests)
so results can be traced back and reproduced. Commands exit nonzero on
any error.
"""
from __future__ import annotations

import copy
import itertools
import json
from pathlib import Path

import click

from . import __version__
from .attack import run as run_attack
from .config import (
    apply_overrides,
    build_run_config,
    file_digest,
    load_config_file,
    write_provenance,
)
from .errors import AdvCamoError
from .evaluation import evaluate_run, load_report, plot_report, save_report
from .geometry import YAW_LABELS, build_toy_car
from .judge import JudgeClient, JudgeConfig, MockJudge
from .sampling import GRID_PITCHES, load_manifest
from .scenes import GridSpec, generate_dataset
from .texture import import_texture
from .victims import get_victim


@click.group()
@click.version_option(__version__, prog_name="advcamo")
def main():
    """Adversarial camouflage textures for vision-language driving models."""


def _floats(csv: str, what: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in csv.split(",") if v.strip())
    except ValueError as exc:
        raise click.UsageError(f"bad {what} list {csv!r}: {exc}") from exc
    if not values:
        raise click.UsageError(f"{what} list is empty")
    return values


def _manifest_path(path: Path) -> Path:
    return path / "manifest.jsonl" if path.is_dir() else path


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--distances", default="5,10", show_default=True, help="capture distances, meters")
@click.option("--pitches", default="22.5,45,67.5", show_default=True, help="camera pitch angles, degrees")
@click.option("--yaws", default=",".join(YAW_LABELS), help="compass yaw labels  [default: all eight]")
@click.option("--variants", default=10, show_default=True, help="background variants per pose")
@click.option("--image-size", default=224, show_default=True, help="square render size, pixels")
@click.option("--seed", default=0, show_default=True)
def dataset(out_dir, distances, pitches, yaws, variants, image_size, seed):
    """Generate the synthetic pose-grid dataset for the toy vehicle."""
    try:
        grid = GridSpec(
            distances=_floats(distances, "distance"),
            pitches=_floats(pitches, "pitch"),
            yaw_labels=tuple(y.strip() for y in yaws.split(",") if y.strip()),
            variants_per_pose=variants,
            image_size=(image_size, image_size),
        )
        manifest = generate_dataset(build_toy_car(), grid, out_dir, seed=seed)
    except AdvCamoError as exc:
        raise click.ClickException(str(exc)) from exc
    write_provenance(
        out_dir,
        "dataset",
        {
            "distances": list(grid.distances),
            "pitches": list(grid.pitches),
            "yaws": list(grid.yaw_labels),
            "variants_per_pose": grid.variants_per_pose,
            "image_size": list(grid.image_size),
            "seed": seed,
        },
        seed=seed,
        outputs={"manifest.jsonl": file_digest(Path(out_dir) / "manifest.jsonl")},
    )
    click.echo(f"{len(manifest)} entries")


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="YAML config file")
@click.option("--manifest", "manifest_arg", type=click.Path(path_type=Path), default=None, help="dataset dir or manifest.jsonl (falls back to paths.dataset)")
@click.option("--out", "out_arg", type=click.Path(path_type=Path), default=None, help="run directory (falls back to paths.out)")
@click.option("--set", "overrides", multiple=True, metavar="PATH=VALUE", help="config override, e.g. attack.delta=0.7")
@click.option("--lr", type=float, default=None, help="shorthand for run.learning_rate")
@click.option("--epochs", type=int, default=None, help="shorthand for run.max_epochs")
@click.option("--seed", type=int, default=None, help="shorthand for run.seed")
@click.option("--resume", is_flag=True, help="continue from the newest checkpoint in --out")
def attack(config_path, manifest_arg, out_arg, overrides, lr, epochs, seed, resume):
    """Optimize an adversarial texture against the configured victim."""
    ov = list(overrides)
    if lr is not None:
        ov.append(f"run.learning_rate={lr}")
    if epochs is not None:
        ov.append(f"run.max_epochs={epochs}")
    if seed is not None:
        ov.append(f"run.seed={seed}")
    try:
        cfg = apply_overrides(load_config_file(config_path), ov)
        manifest_path = manifest_arg or cfg["paths"]["dataset"]
        if not manifest_path:
            raise click.ClickException("no dataset: pass --manifest or set paths.dataset in the config")
        out_dir = out_arg or cfg["paths"]["out"]
        if not out_dir:
            raise click.ClickException("no run directory: pass --out or set paths.out in the config")
        out_dir = Path(out_dir)
        run_config = build_run_config(cfg)
        manifest = load_manifest(_manifest_path(Path(manifest_path)))
        state = run_attack(run_config, manifest, out_dir=out_dir, resume=resume)
    except AdvCamoError as exc:
        raise click.ClickException(str(exc)) from exc
    outputs = {
        name: file_digest(out_dir / name)
        for name in ("adv_texture.png", "state.bin", "history.jsonl")
        if (out_dir / name).exists()
    }
    write_provenance(out_dir, "attack", cfg, ov, seed=run_config.seed, outputs=outputs)
    click.echo(
        f"{state.iteration} iterations, final loss {state.history[-1]['loss']:.4f}, "
        f"texture at {out_dir / 'adv_texture.png'}"
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _make_judge(judge_mode: str):
    if judge_mode == "none":
        return None
    if judge_mode == "mock":
        return MockJudge()
    return JudgeClient(JudgeConfig.from_env())


@main.command("eval")
@click.option("--texture", "texture_path", required=True, type=click.Path(path_type=Path))
@click.option("--manifest", "manifest_arg", required=True, type=click.Path(path_type=Path), help="held-out dataset dir or manifest.jsonl")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--judge", "judge_mode", type=click.Choice(["none", "mock", "http"]), default="none", show_default=True)
@click.option("--mode", type=click.Choice(["closed_set", "open_text"]), default="closed_set", show_default=True)
@click.option("--victim", "victim_name", default="surrogate-vlm", show_default=True)
@click.option("--victim-seed", default=0, show_default=True)
@click.option("--clean-texture", "clean_path", type=click.Path(path_type=Path), default=None, help="reference texture (default: the factory paint)")
def eval_cmd(texture_path, manifest_arg, out_dir, judge_mode, mode, victim_name, victim_seed, clean_path):
    """Score a texture on a held-out manifest: NLP metrics, judge, 3-P rates."""
    try:
        texture = import_texture(texture_path)
        manifest = load_manifest(_manifest_path(Path(manifest_arg)))
        victim = get_victim(victim_name, seed=victim_seed)
        clean = import_texture(clean_path) if clean_path else None
        report = evaluate_run(
            texture,
            manifest,
            victim,
            judge=_make_judge(judge_mode),
            mode=mode,
            clean_texture=clean,
        )
        save_report(report, out_dir)
    except AdvCamoError as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = Path(out_dir)
    write_provenance(
        out_dir,
        "eval",
        {
            "texture": str(texture_path),
            "manifest": str(manifest_arg),
            "judge": judge_mode,
            "mode": mode,
            "victim": victim_name,
            "victim_seed": victim_seed,
            "clean_texture": str(clean_path) if clean_path else None,
        },
        seed=victim_seed,
        outputs={
            "records.jsonl": file_digest(out_dir / "records.jsonl"),
            "summary.json": file_digest(out_dir / "summary.json"),
        },
    )
    for scenario, stats in report.scenario_stats.items():
        click.echo(f"{scenario}: success {stats['success_rate']:.1%} over {stats['n']} records")
    click.echo(f"overall {report.overall_success:.1%}, universality {report.universality:.1%}")
    if not report.complete:
        click.echo("warning: some judge calls failed; report flagged incomplete")


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _ladder_cells(cfg: dict) -> list[tuple[str, dict]]:
    """The staged comparison: objective layers, then sampling, then scales."""
    uniform = {str(p): 1.0 for p in GRID_PITCHES}
    reweighted = {str(GRID_PITCHES[0]): 3.0, str(GRID_PITCHES[1]): 1.0, str(GRID_PITCHES[2]): 1.0}
    single_scale = [
        {"crop_fraction": 1.0, "weight": 1.0, "output_size": list(cfg["schedule"][0]["output_size"]), "label": "full"}
    ]
    multi_scale = copy.deepcopy(cfg["schedule"])
    rows = [
        ("fdl-encoder", {"encoder": 1.0, "projector": 0.0}, uniform, single_scale),
        ("fdl-projector", {"encoder": 0.0, "projector": 1.0}, uniform, single_scale),
        ("fdl-multilayer", {"encoder": 0.4, "projector": 0.6}, uniform, single_scale),
        ("fdl-multilayer+sampling", {"encoder": 0.4, "projector": 0.6}, reweighted, single_scale),
        ("fdl-multilayer+sampling+multiscale", {"encoder": 0.4, "projector": 0.6}, reweighted, multi_scale),
    ]
    cells = []
    for name, weights, pitch_weights, schedule in rows:
        cell = copy.deepcopy(cfg)
        cell["attack"]["layer_weights"] = weights
        cell["sampling"]["pitch_weights"] = pitch_weights
        cell["schedule"] = schedule
        cells.append((name, cell))
    return cells


def _grid_cells(cfg: dict, alphas, deltas, lambdas, ratios) -> list[tuple[str, dict]]:
    def axis(raw, parse, tag):
        if not raw:
            return [None]
        return [(tag, parse(v.strip())) for v in raw.split(",") if v.strip()]

    def parse_alpha(v):
        enc, proj = v.split(":")
        return {"encoder": float(enc), "projector": float(proj)}

    def parse_ratio(v):
        parts = [float(x) for x in v.split(":")]
        if len(parts) != len(GRID_PITCHES):
            raise click.UsageError(f"pitch ratio {v!r} needs {len(GRID_PITCHES)} numbers")
        return {str(p): w for p, w in zip(GRID_PITCHES, parts)}

    axes = [
        axis(alphas, parse_alpha, "alpha"),
        axis(deltas, float, "delta"),
        axis(lambdas, float, "lambda"),
        axis(ratios, parse_ratio, "ratio"),
    ]
    cells = []
    for combo in itertools.product(*axes):
        parts = []
        cell = copy.deepcopy(cfg)
        for item in combo:
            if item is None:
                continue
            tag, value = item
            if tag == "alpha":
                cell["attack"]["layer_weights"] = value
                parts.append(f"a{value['encoder']:g}-{value['projector']:g}")
            elif tag == "delta":
                cell["attack"]["delta"] = value
                parts.append(f"d{value:g}")
            elif tag == "lambda":
                cell["attack"]["lambda_smooth"] = value
                parts.append(f"l{value:g}")
            elif tag == "ratio":
                cell["sampling"]["pitch_weights"] = value
                ratio = "-".join(f"{w:g}" for w in value.values())
                parts.append(f"r{ratio}")
        if not parts:
            continue
        cells.append(("_".join(parts), cell))
    return cells


@main.command()
@click.option("--manifest", "manifest_arg", required=True, type=click.Path(path_type=Path))
@click.option("--eval-manifest", "eval_arg", type=click.Path(path_type=Path), default=None, help="held-out set  [default: the training manifest]")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--alpha", default="", help="encoder:projector weight pairs, comma-separated (0.4:0.6,0.2:0.8)")
@click.option("--delta", default="", help="key-feature thresholds, comma-separated")
@click.option("--lambda-smooth", "lambda_s", default="", help="smoothness weights, comma-separated")
@click.option("--pitch-ratio", default="", help="pitch weight ratios, comma-separated (3:1:1,1:1:1)")
@click.option("--ladder", is_flag=True, help="run the staged objective/sampling/multi-scale comparison instead of a grid")
@click.option("--epochs", type=int, default=None, help="override run.max_epochs for every cell")
@click.option("--seed", type=int, default=None, help="override run.seed for every cell")
def sweep(manifest_arg, eval_arg, out_dir, config_path, alpha, delta, lambda_s, pitch_ratio, ladder, epochs, seed):
    """Run an ablation grid (or the staged ladder) and tabulate the results."""
    try:
        base = load_config_file(config_path)
        if epochs is not None:
            base["run"]["max_epochs"] = epochs
        if seed is not None:
            base["run"]["seed"] = seed
        cells = _ladder_cells(base) if ladder else _grid_cells(base, alpha, delta, lambda_s, pitch_ratio)
        if not cells:
            raise click.UsageError("sweep grid is empty: pass --ladder or at least one of --alpha/--delta/--lambda-smooth/--pitch-ratio")
        manifest = load_manifest(_manifest_path(Path(manifest_arg)))
        eval_manifest = (
            load_manifest(_manifest_path(Path(eval_arg))) if eval_arg else manifest
        )
        out_dir = Path(out_dir)
        rows = []
        for name, cell_cfg in cells:
            cell_dir = out_dir / "cells" / name
            run_config = build_run_config(cell_cfg)
            state = run_attack(run_config, manifest, out_dir=cell_dir)
            victim = get_victim(run_config.victim_name, seed=run_config.victim_seed)
            report = evaluate_run(state.texture, eval_manifest, victim)
            save_report(report, cell_dir)
            write_provenance(
                cell_dir,
                "sweep-cell",
                cell_cfg,
                seed=run_config.seed,
                outputs={
                    "adv_texture.png": file_digest(cell_dir / "adv_texture.png"),
                    "summary.json": file_digest(cell_dir / "summary.json"),
                },
            )
            rows.append(
                {
                    "cell": name,
                    "overall_success": report.overall_success,
                    **{
                        f"{s}_success": report.scenario_stats[s]["success_rate"]
                        for s in report.scenario_stats
                    },
                    "universality": report.universality,
                    "final_loss": state.history[-1]["loss"],
                }
            )
            click.echo(f"{name}: overall success {report.overall_success:.1%}")
    except AdvCamoError as exc:
        raise click.ClickException(str(exc)) from exc

    (out_dir / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n")
    cols = list(rows[0].keys())
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for row in rows:
        lines.append(
            "| "
            + " | ".join(
                f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c]) for c in cols
            )
            + " |"
        )
    (out_dir / "comparison.md").write_text("\n".join(lines) + "\n")
    write_provenance(
        out_dir,
        "sweep",
        base,
        seed=base["run"]["seed"],
        outputs={"comparison.json": file_digest(out_dir / "comparison.json")},
        extra={"cells": [name for name, _ in cells]},
    )
    click.echo(f"comparison table at {out_dir / 'comparison.md'}")


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


@main.command()
@click.option("--report", "report_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def plot(report_dir, out_path):
    """Render success-vs-distance and success-vs-pitch charts from a report."""
    try:
        report = load_report(report_dir)
        plot_report(report, out_path)
    except AdvCamoError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
