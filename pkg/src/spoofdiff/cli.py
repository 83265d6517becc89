"""Command-line pipeline: corpus synthesis through evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Every failure prints a single-line diagnostic to stderr; every artifact
embeds the run seed and the resolved config hash.
"""

from __future__ import annotations

import json
import logging
import operator
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import classifier as clf
from . import metrics as mx
from .config import config_hash, load_config, log_config
from .data import SampleRecord, SynthConfig, load_manifest, synth_corpus
from .denoiser import load_denoiser, save_denoiser
from .errors import DataError, UsageError
from .images import from_model_space, load_rgb, save_rgb
from .margin_loss import MarginParams
from .quality import load_quality_cache, load_scorer, score_image, write_quality_cache
from .sampler import SamplerConfig, append_generation_log, edit_sample_batch
from .style_encoder import (
    StyleEncoderConfig,
    encode_style,
    encoder_from_payload,
    load_style_encoder,
    save_style_encoder,
    train_style_encoder,
)

logger = logging.getLogger(__name__)

_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<=": operator.le,
    ">=": operator.ge,
    "<": operator.lt,
    ">": operator.gt,
}
_FILTER_FIELDS = ("identity_id", "domain_id", "style_id", "label")


def parse_record_filter(expr: str):
    """Comma-joined clauses like 'identity_id<10,domain_id==0' (AND semantics)."""
    clauses = []
    for part in expr.split(","):
        part = part.strip()
        if not part:
            continue
        for symbol in ("==", "!=", "<=", ">=", "<", ">"):
            if symbol in part:
                field, _, raw = part.partition(symbol)
                field, raw = field.strip(), raw.strip()
                if field not in _FILTER_FIELDS:
                    raise UsageError(
                        f"unknown filter field {field!r}; expected one of {_FILTER_FIELDS}"
                    )
                value = raw if field == "label" else int(raw)
                clauses.append((field, _OPS[symbol], value))
                break
        else:
            raise UsageError(f"cannot parse filter clause {part!r}")

    def matches(record: SampleRecord) -> bool:
        return all(op(getattr(record, field), value) for field, op, value in clauses)

    return matches


def _parse_threshold(spec: str):
    kind, _, value = spec.partition(":")
    try:
        if kind == "fixed":
            return ("fixed", float(value))
        if kind == "bpcer-dev":
            return ("bpcer-dev", float(value))
    except ValueError:
        pass
    raise UsageError(f"threshold must be 'fixed:TAU' or 'bpcer-dev:TARGET', got {spec!r}")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("synth-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--identities", required=True, type=int)
@click.option("--styles", required=True, type=int)
@click.option("--size", default=64, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
def synth_data(out_dir: str, identities: int, styles: int, size: int, seed: int) -> None:
    """Render a procedural live/spoof corpus and its manifest."""
    if identities < 1 or styles < 1:
        raise UsageError("--identities and --styles must be >= 1")
    manifest = synth_corpus(
        SynthConfig(identities=identities, styles=styles, size=size, seed=seed), out_dir
    )
    click.echo(str(manifest))


@cli.command("score-quality")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--scorer", default="proxy", show_default=True)
@click.option("--out", "cache_path", required=True, type=click.Path())
def score_quality(manifest_path: str, scorer: str, cache_path: str) -> None:
    """Score every manifest image once and cache {path, score} lines."""
    records = load_manifest(manifest_path)
    model = load_scorer(scorer)
    scores = {r.path: score_image(load_rgb(r.path), model) for r in records}
    write_quality_cache(cache_path, scores)
    click.echo(f"scored {len(scores)} images -> {cache_path}")


@cli.command("train-style-encoder")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Overrides the config seed.")
def train_style_encoder_cmd(manifest_path, config_path, ckpt_path, seed) -> None:
    """Train the spoofing-style classifier used for conditioning."""
    cfg = load_config(config_path, {"seed": seed})
    log_config(cfg)
    records = load_manifest(manifest_path)
    num_styles = max(r.style_id for r in records) + 1
    encoder_config = StyleEncoderConfig(
        num_styles=num_styles,
        image_size=int(cfg["data.image_size"]),
        stem_channels=int(cfg["encoder.stem_channels"]),
        stage_channels=tuple(cfg["encoder.stage_channels"]),
        blocks_per_stage=int(cfg["encoder.blocks_per_stage"]),
        condition_resolutions=tuple(cfg["encoder.condition_resolutions"]),
    )
    encoder, history = train_style_encoder(
        records,
        encoder_config,
        epochs=int(cfg["encoder.epochs"]),
        batch_size=int(cfg["encoder.batch_size"]),
        lr=float(cfg["encoder.lr"]),
        seed=int(cfg["seed"]),
    )
    save_style_encoder(
        ckpt_path, encoder, history, seed=int(cfg["seed"]), config_hash=config_hash(cfg)
    )
    click.echo(f"train accuracy {history['train_accuracy']:.4f} -> {ckpt_path}")


@cli.command("train-diffusion")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--encoder", "encoder_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Overrides the config seed.")
def train_diffusion_cmd(manifest_path, encoder_path, config_path, ckpt_path, seed) -> None:
    """Train the noise-prediction network on live/spoof pairs."""
    from .training import train_diffusion

    cfg = load_config(config_path, {"seed": seed})
    log_config(cfg)
    records = load_manifest(manifest_path)
    encoder, encoder_payload = load_style_encoder(encoder_path)
    model, schedule, history = train_diffusion(records, encoder, cfg)
    save_denoiser(
        ckpt_path,
        model,
        seed=int(cfg["seed"]),
        schedule_params={
            "timesteps": int(cfg["schedule.timesteps"]),
            "beta_start": float(cfg["schedule.beta_start"]),
            "beta_end": float(cfg["schedule.beta_end"]),
            "kind": str(cfg["schedule.kind"]),
        },
        config_hash=config_hash(cfg),
        style_encoder=encoder_payload,
        history={"loss_tail": history["loss_curve"][-20:], "pairs": history["pairs"]},
    )
    click.echo(f"final loss {history['loss_curve'][-1]:.4f} -> {ckpt_path}")


@cli.command("generate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--live-filter", "live_filter", default=None)
@click.option("--guide-style", "guide_style", required=True, type=int)
@click.option("--t-start", "t_start", default=100, type=int, show_default=True)
@click.option("--gamma", default=2.0, type=float, show_default=True)
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--batch-size", default=25, type=int, show_default=True)
def generate(
    manifest_path, live_filter, guide_style, t_start, gamma, ckpt_path, out_dir, seed, batch_size
) -> None:
    """Turn live images into spoofs of the requested style."""
    from .diffusion import build_schedule
    from .images import load_image_tensor

    matches = parse_record_filter(live_filter) if live_filter else None
    records = load_manifest(manifest_path)
    lives = [r for r in records if r.is_live]
    if matches is not None:
        lives = [r for r in lives if matches(r)]
    if not lives:
        raise DataError("no live records match the filter")
    guides = [r for r in records if not r.is_live and r.style_id == guide_style]
    if not guides:
        raise DataError(f"no spoof records with style {guide_style}")

    model, payload = load_denoiser(ckpt_path)
    sp = payload["schedule"]
    schedule = build_schedule(sp["timesteps"], sp["beta_start"], sp["beta_end"], sp["kind"])
    if not 1 <= t_start <= schedule.timesteps:
        raise UsageError(f"--t-start must be in [1, {schedule.timesteps}]")
    encoder_payload = payload.get("style_encoder")
    if encoder_payload is None:
        raise DataError(f"{ckpt_path} lacks an embedded style encoder")
    encoder = encoder_from_payload(encoder_payload)

    size = model.config.image_size
    sampler_cfg = SamplerConfig(gamma=gamma, t_start=t_start, seed=seed)
    out_dir = Path(out_dir)
    log_path = out_dir / "generation_log.jsonl"
    guide_rng = np.random.default_rng(seed)

    with torch.no_grad():
        for start in range(0, len(lives), batch_size):
            chunk = lives[start : start + batch_size]
            live_batch = torch.stack([load_image_tensor(r.path, size) for r in chunk])
            guide_records = [guides[int(guide_rng.integers(len(guides)))] for _ in chunk]
            guide_batch = torch.stack([load_image_tensor(r.path, size) for r in guide_records])
            cond = encode_style(encoder, guide_batch)
            indices = list(range(start, start + len(chunk)))
            outputs = edit_sample_batch(
                live_batch, cond, sampler_cfg, schedule, model, sample_indices=indices
            )
            for record, guide_record, index, img in zip(chunk, guide_records, indices, outputs):
                name = f"gen_{index:05d}_id{record.identity_id:04d}_style{guide_style}.png"
                save_rgb(out_dir / name, from_model_space(img))
                append_generation_log(
                    log_path,
                    live_path=record.path,
                    guide_path=guide_record.path,
                    style_id=guide_style,
                    gamma=gamma,
                    t_start=t_start,
                    seed=seed * 1000003 + index,
                    output_path=str(out_dir / name),
                )
    click.echo(f"generated {len(lives)} images -> {out_dir}")


@cli.command("train-classifier")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--quality", "quality_path", required=True, type=click.Path())
@click.option("--s-live", "s_live", default=None, type=float)
@click.option("--s-spoof", "s_spoof", default=None, type=float)
@click.option("--m", "m_scale", default=None, type=float)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Overrides the config seed.")
def train_classifier_cmd(
    manifest_path, quality_path, s_live, s_spoof, m_scale, config_path, ckpt_path, seed
) -> None:
    """Train the live/spoof classifier with the quality margin loss."""
    cfg = load_config(
        config_path, {"seed": seed, "loss.s_live": s_live, "loss.s_spoof": s_spoof, "loss.m": m_scale}
    )
    log_config(cfg)
    records = load_manifest(manifest_path)
    quality = load_quality_cache(quality_path)
    params = MarginParams(
        s_live=float(cfg["loss.s_live"]),
        s_spoof=float(cfg["loss.s_spoof"]),
        m=float(cfg["loss.m"]),
        scale_all_logits=bool(cfg["loss.scale_all_logits"]),
    )
    config = clf.ClassifierConfig(
        num_classes=max(r.style_id for r in records) + 1,
        image_size=int(cfg["data.image_size"]),
        stem_channels=int(cfg["classifier.stem_channels"]),
        stage_channels=tuple(cfg["classifier.stage_channels"]),
        feature_dim=int(cfg["classifier.feature_dim"]),
        loss=str(cfg["loss.kind"]),
        epochs=int(cfg["classifier.epochs"]),
        batch_size=int(cfg["classifier.batch_size"]),
        optimizer=str(cfg["classifier.optimizer"]),
        lr=float(cfg["classifier.lr"]),
        seed=int(cfg["seed"]),
    )
    model, history = clf.train_classifier(records, quality, params, config)
    clf.save_classifier(
        ckpt_path,
        model,
        params=params,
        history=history,
        seed=int(cfg["seed"]),
        config_hash=config_hash(cfg),
        live_class_ids=clf.live_class_ids(records),
    )
    click.echo(f"final loss {history['loss_curve'][-1]:.4f} -> {ckpt_path}")


def _scores_from_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    score_path = Path(path)
    if not score_path.exists():
        raise DataError(f"score file not found: {path}")
    with score_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                scores.append(float(raw["score"]))
                labels.append(1 if raw["label"] == "live" else 0)
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed score entry ({exc})") from exc
    return np.asarray(scores), np.asarray(labels)


def _scores_from_model(ckpt_path: str, manifest_path: str) -> tuple[np.ndarray, np.ndarray]:
    model, payload = clf.load_classifier(ckpt_path)
    records = load_manifest(manifest_path)
    live_ids = tuple(payload.get("live_class_ids") or clf.live_class_ids(records))
    m = float(payload.get("margin_params", {}).get("m", 30.0))
    scores = clf.liveness_scores(model, records, live_ids, m=m)
    labels = np.array([1 if r.is_live else 0 for r in records])
    return scores, labels


@cli.command("evaluate")
@click.option("--ckpt", "ckpt_path", default=None, type=click.Path())
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--scores", "scores_path", default=None, type=click.Path(),
              help="JSONL of {score, label} entries instead of --ckpt/--manifest.")
@click.option("--threshold", "threshold_spec", default="fixed:0.5", show_default=True)
@click.option("--dev-manifest", "dev_manifest", default=None, type=click.Path())
@click.option("--dev-scores", "dev_scores_path", default=None, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
def evaluate_cmd(
    ckpt_path, manifest_path, scores_path, threshold_spec, dev_manifest, dev_scores_path,
    report_path, seed,
) -> None:
    """Compute HTER/AUC/ACER at the requested threshold policy."""
    kind, value = _parse_threshold(threshold_spec)
    if scores_path is not None:
        scores, labels = _scores_from_file(scores_path)
    elif ckpt_path is not None and manifest_path is not None:
        scores, labels = _scores_from_model(ckpt_path, manifest_path)
    else:
        raise UsageError("provide either --scores or both --ckpt and --manifest")

    if kind == "fixed":
        policy = mx.FixedThreshold(value)
    else:
        if dev_scores_path is not None:
            dev_scores, dev_labels = _scores_from_file(dev_scores_path)
        elif dev_manifest is not None and ckpt_path is not None:
            dev_scores, dev_labels = _scores_from_model(ckpt_path, dev_manifest)
        else:
            raise UsageError("bpcer-dev needs --dev-scores or --dev-manifest with --ckpt")
        policy = mx.BpcerOnDev(value, dev_scores, dev_labels)

    report = mx.evaluate(scores, labels, policy)
    cfg_hash = config_hash(load_config(None))
    mx.write_report(report_path, report, seed=seed, config_hash=cfg_hash)
    click.echo(report.format_table())


def entry(argv: list[str] | None = None) -> int:
    """Run the CLI with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help paths
        return int(exc.exit_code)
    except (click.UsageError, UsageError) as exc:
        message = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
        print(f"usage error: {message}", file=sys.stderr)
        return 1
    except click.Abort:
        print("aborted", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(entry())


if __name__ == "__main__":
    main()
