"""``forge`` command line: one entry point per pipeline.

Every subcommand takes ``--config`` (YAML, optional; defaults are fully
mock-backed) and ``--seed`` (overrides the config seed), and records the
config hash + seed into whatever artifact it writes, so identical
invocations reproduce identical outputs.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .adapters.registry import build_registry
from .config import ConfigError, ForgeConfig
from .edit_engine import EditRequest, run_edit
from .editmath import GuidanceConfig, NoiseSchedule
from .evaluator import evaluate_run
from .imgio import load_image, save_image
from .review import ReviewStore, create_app
from .schema import dataset_stats, make_split, read_manifest
from .t2i_branch import run_t2i_branch
from .trainer import TinyDenoiser, TrainConfig, finetune
from .video_branch import DirectoryVideoSource, run_video_branch


def _load_config(config_path: str | None, seed: int | None) -> ForgeConfig:
    cfg = ForgeConfig.load(config_path) if config_path else ForgeConfig()
    cfg.validate()
    if seed is not None:
        cfg.seed = seed
    return cfg


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _write_run_summary(out_dir: Path, name: str, cfg: ForgeConfig, result) -> None:
    summary = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "attrition": result.attrition.to_dict(),
        "warnings": result.warnings,
        "adapter_transcripts": result.transcripts,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"run_summary_{name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


@click.group()
def main() -> None:
    """Data foundry, trainer, and editor for world-instructed image editing."""


@main.command()
@click.option("--category", "categories", multiple=True, help="Category name; repeatable.")
@click.option("--count", type=int, default=None, help="Records per listed category.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="dataset")
@click.option("--seed", type=int, default=None)
@click.option("--dry-run", is_flag=True, help="Validate config and adapters; write nothing.")
def t2i(categories, count, config_path, out_dir, seed, dry_run) -> None:
    """Generate triplets through the text-to-image branch."""
    try:
        cfg = _load_config(config_path, seed)
        registry = build_registry(cfg.adapters, cfg.seed)
    except ConfigError as exc:
        _fail(str(exc))
        return
    quotas = dict(cfg.t2i.quotas)
    if categories:
        quotas = {c: (count if count is not None else 1) for c in categories}
    if dry_run:
        click.echo(f"dry run ok: config hash {cfg.config_hash()}, quotas {quotas}")
        return
    result = run_t2i_branch(registry, cfg.t2i, cfg.editmath, out_dir, cfg.seed, quotas=quotas)
    _write_run_summary(Path(out_dir), "t2i", cfg, result)
    click.echo(
        f"t2i branch: produced {result.attrition.produced}/{result.attrition.requested} "
        f"(drops: {result.attrition.drops or 'none'})"
    )


@main.command()
@click.option("--frames-root", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="dataset")
@click.option("--seed", type=int, default=None)
@click.option("--dry-run", is_flag=True)
def video(frames_root, config_path, out_dir, seed, dry_run) -> None:
    """Extract triplets from per-clip frame directories."""
    try:
        cfg = _load_config(config_path, seed)
        registry = build_registry(cfg.adapters, cfg.seed)
        source = DirectoryVideoSource(frames_root)
    except (ConfigError, FileNotFoundError) as exc:
        _fail(str(exc))
        return
    if dry_run:
        click.echo(f"dry run ok: config hash {cfg.config_hash()}")
        return
    result = run_video_branch(source, registry, cfg.video, out_dir, cfg.seed)
    _write_run_summary(Path(out_dir), "video", cfg, result)
    click.echo(
        f"video branch: produced {result.attrition.produced}/{result.attrition.requested} "
        f"(drops: {result.attrition.drops or 'none'})"
    )


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--images-root", type=click.Path(), default=None, help="Defaults to the manifest directory.")
@click.option("--out", "out_dir", type=click.Path(), default="ckpts")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train(manifest_path, images_root, out_dir, config_path, epochs, batch_size, learning_rate, resolution, seed) -> None:
    """Fine-tune the trainable denoiser on a manifest."""
    try:
        cfg = _load_config(config_path, seed)
    except ConfigError as exc:
        _fail(str(exc))
        return
    try:
        records = read_manifest(manifest_path)
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return
    section = cfg.trainer
    train_cfg = TrainConfig(
        epochs=epochs if epochs is not None else section.epochs,
        batch_size=batch_size if batch_size is not None else section.batch_size,
        resolution=resolution if resolution is not None else section.resolution,
        learning_rate=learning_rate if learning_rate is not None else section.learning_rate,
        drop_image=section.drop_image,
        drop_text=section.drop_text,
        drop_both=section.drop_both,
        seed=cfg.seed,
    )
    images_root = images_root or str(Path(manifest_path).parent)
    schedule = NoiseSchedule.linear(cfg.editmath.schedule_steps)
    try:
        handle = finetune(records, train_cfg, TinyDenoiser(seed=cfg.seed), schedule, out_dir, images_root)
    except ValueError as exc:
        _fail(str(exc))
        return
    status = "aborted (non-finite loss)" if handle.aborted else "completed"
    click.echo(f"training {status}: {len(handle.losses)} steps, checkpoints in {handle.directory}")
    if handle.aborted:
        sys.exit(1)


@main.command()
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--instruction", required=True)
@click.option("--out", "out_path", type=click.Path(), default="edited.png")
@click.option("--post-edit/--no-post-edit", default=False)
@click.option("--s-img", type=float, default=None)
@click.option("--s-txt", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def edit(image_path, instruction, out_path, post_edit, s_img, s_txt, steps, config_path, seed) -> None:
    """Apply one instruction to one image."""
    try:
        cfg = _load_config(config_path, seed)
        registry = build_registry(cfg.adapters, cfg.seed)
    except ConfigError as exc:
        _fail(str(exc))
        return
    try:
        image = load_image(image_path)
    except (FileNotFoundError, OSError) as exc:
        _fail(f"cannot read image {image_path}: {exc}")
        return
    guidance = GuidanceConfig(
        s_img if s_img is not None else cfg.editmath.s_img,
        s_txt if s_txt is not None else cfg.editmath.s_txt,
    )
    request = EditRequest(
        input_image=image,
        instruction=instruction,
        guidance=guidance,
        seed=cfg.seed,
        steps=steps if steps is not None else cfg.editmath.schedule_steps,
        post_edit=post_edit,
    )
    schedule = NoiseSchedule.linear(cfg.editmath.schedule_steps)
    result = run_edit(request, registry, schedule, cfg.editmath.binarize_factor)
    out_path = Path(out_path)
    save_image(result.final, out_path)
    save_image(result.generated, out_path.with_name(out_path.stem + "_generated.png"))
    if result.instruction_mask is not None:
        mask_img = np.repeat(result.instruction_mask.values[:, :, None], 3, axis=2).astype(float)
        save_image(mask_img, out_path.with_name(out_path.stem + "_instruction_mask.png"))
    if result.edit_mask is not None:
        mask_img = np.repeat(result.edit_mask.values[:, :, None], 3, axis=2).astype(float)
        save_image(mask_img, out_path.with_name(out_path.stem + "_edit_mask.png"))
    click.echo(f"wrote {out_path}")


@main.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--outputs", "outputs_dir", type=click.Path(), required=True,
              help="Directory of <record_id>.png edited results.")
@click.option("--split", type=click.Choice(["test", "all"]), default="test")
@click.option("--t2i-test-n", type=int, default=300)
@click.option("--video-test-n", type=int, default=200)
@click.option("--report", "report_path", type=click.Path(), default="report.json")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def eval_cmd(manifest_path, outputs_dir, split, t2i_test_n, video_test_n, report_path, config_path, seed) -> None:
    """Score a method's outputs over the manifest's test split."""
    try:
        cfg = _load_config(config_path, seed)
        registry = build_registry(cfg.adapters, cfg.seed)
        records = read_manifest(manifest_path)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return
    if split == "test":
        chosen = make_split(records, cfg.seed, t2i_test_n, video_test_n).test_ids
        records = [r for r in records if r.id in chosen]
    outputs_dir = Path(outputs_dir)
    outputs = {}
    inputs = {}
    manifest_root = Path(manifest_path).parent
    for rec in records:
        candidate = outputs_dir / f"{rec.id}.png"
        if candidate.exists():
            outputs[rec.id] = load_image(candidate)
        input_path = manifest_root / rec.input_image
        if input_path.exists():
            inputs[rec.id] = load_image(input_path)
    report = evaluate_run(
        records, outputs, registry.metric_clip, registry.judge, registry.metric_lpips, inputs
    )
    Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    click.echo(report.render_table())
    click.echo(f"report written to {report_path}")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--top-k", type=int, default=20)
@click.option("--report", "report_path", type=click.Path(), default=None)
def stats(manifest_path, top_k, report_path) -> None:
    """Dataset composition: counts per branch/category, top keywords."""
    try:
        records = read_manifest(manifest_path)
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return
    report = dataset_stats(records, top_k=top_k)
    click.echo(report.render_table())
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


@main.command("review-serve")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--images-root", type=click.Path(), default=None)
@click.option("--static-dir", type=click.Path(), default=None,
              help="Built frontend assets; defaults to frontend/dist when present.")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--config", "config_path", type=click.Path(), default=None)
def review_serve(manifest_path, images_root, static_dir, host, port, config_path) -> None:
    """Serve the review API (and frontend, when built)."""
    import uvicorn

    try:
        cfg = _load_config(config_path, None)
        store = ReviewStore.open(manifest_path, compact_every=cfg.review.compact_every)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return
    images_root = images_root or str(Path(manifest_path).parent)
    if static_dir is None:
        default_static = Path("frontend") / "dist"
        static_dir = str(default_static) if default_static.is_dir() else None
    registry = build_registry(cfg.adapters, cfg.seed)
    rescorer = None
    if cfg.review.rescore_revised:
        rescorer = _make_rescorer(registry, Path(images_root), cfg)
    app = create_app(
        store,
        images_root=images_root,
        static_dir=static_dir,
        token=cfg.review.token,
        rescorer=rescorer,
    )
    stop_worker = _start_regeneration_thread(store, registry, cfg, images_root)
    click.echo(f"serving review API on http://{host}:{port}")
    try:
        uvicorn.run(app, host=host, port=port)
    finally:
        stop_worker()
        store.save()  # hard crashes are covered by audit-log recovery in open()


def _start_regeneration_thread(store, registry, cfg: ForgeConfig, images_root: str):
    """Drain reviewer regeneration requests in the background."""
    import logging
    import threading

    from .regen import make_regenerator
    from .review import run_regeneration_worker

    regenerate = make_regenerator(registry, cfg, images_root)
    stop_event = threading.Event()

    def drain() -> None:
        while not stop_event.is_set():
            try:
                run_regeneration_worker(store, regenerate)
            except Exception:
                logging.getLogger(__name__).exception("regeneration worker crashed; retrying")
            stop_event.wait(cfg.review.regen_poll_seconds)

    thread = threading.Thread(target=drain, name="regeneration-worker", daemon=True)
    thread.start()

    def stop() -> None:
        stop_event.set()
        thread.join(timeout=5.0)

    return stop


def _make_rescorer(registry, images_root: Path, cfg: ForgeConfig):
    """Discriminator pass over a revised record's existing image pair."""
    from .t2i_branch import TextQuadruple, discriminate

    def rescore(record) -> dict:
        original = load_image(images_root / record.input_image)
        edited = load_image(images_root / record.output_image)
        quad = TextQuadruple(
            input_prompt=record.provenance.get("input_prompt", record.output_description),
            instruction=record.instruction,
            output_prompt=record.output_description,
            keywords=tuple(record.keywords),
            category=record.category,
        )
        verdict = discriminate(
            original, edited, quad, registry.discriminator, cfg.t2i.discriminator_mode
        )
        return {"keep": verdict.keep, "scores": verdict.scores, "unevaluable": verdict.unevaluable}

    return rescore


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def export(manifest_path, out_path) -> None:
    """Write the training-ready manifest (Approved and Revised records)."""
    try:
        store = ReviewStore.open(manifest_path)
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return
    kept = store.export_approved(out_path)
    click.echo(f"exported {len(kept)} records to {out_path}")


if __name__ == "__main__":
    main()
