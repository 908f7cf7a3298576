"""Batch and operations entry points.

Exit codes: 0 ok, 1 analysis failure, 2 usage/IO error. With --json-errors
the stderr line is a machine-parseable {"error": {"code", "message"}}.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import metrics as metrics_mod
from .classifier import compare_formats
from .config import config_from_dict, load_config
from .core import io as core_io
from .core.types import Laterality, Structure, VesselMask
from .errors import EyasError
from .pipeline import analyze_image, artifact_files
from .segmenter import BackendRegistry, registry_from_config
from .synthgen import CorpusManifest, GenParams, gen_corpus


def _backend_overrides(spec: str | None, registry: BackendRegistry) -> dict:
    """Apply a backend override to every structure it resolves for."""
    overrides = {}
    if spec:
        for structure in ("onh", "macula", "vessels"):
            try:
                registry.resolve(Structure(structure), spec)
            except EyasError:
                continue
            overrides[structure] = spec
    return overrides


def _fail(code: int, exc_code: str, message: str, json_errors: bool) -> None:
    if json_errors:
        sys.stderr.write(json.dumps({"error": {"code": exc_code, "message": message}}) + "\n")
    else:
        sys.stderr.write(f"error: {message}\n")
    sys.exit(code)


@click.group()
@click.option("--json-errors", is_flag=True, help="emit machine-parseable errors on stderr")
@click.pass_context
def main(ctx, json_errors):
    """Fundus analysis pipeline: corpus generation, analysis, evaluation, services."""
    ctx.ensure_object(dict)
    ctx.obj["json_errors"] = json_errors


@main.command()
@click.option("--count", type=int, required=True, help="number of images")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--noise", type=float, default=8.0, show_default=True, help="gaussian sigma, 0-255 scale")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--size", default="512x512", show_default=True, help="WxH")
@click.option("--mix", default=None, help='class mix JSON, e.g. {"round": 1.0}')
@click.option("--jobs", type=int, default=1, show_default=True)
@click.pass_context
def gen(ctx, count, seed, noise, out_dir, size, mix, jobs):
    """Generate a synthetic corpus with ground truth."""
    json_errors = ctx.obj["json_errors"]
    try:
        w, _, h = size.partition("x")
        params = GenParams(
            img_w=int(w), img_h=int(h),
            class_mix=json.loads(mix) if mix else {},
            noise_sigma=noise,
        )
    except (ValueError, json.JSONDecodeError) as exc:
        _fail(2, "usage", f"bad parameters: {exc}", json_errors)
    try:
        manifest = gen_corpus(count, params, seed, out_dir, jobs=jobs)
    except EyasError as exc:
        _fail(2 if exc.code == "validation" else 1, exc.code, str(exc), json_errors)
    except OSError as exc:
        _fail(2, "io", str(exc), json_errors)
    click.echo(f"wrote {len(manifest.entries)} images to {out_dir}")


def _analysis_worker(args: tuple) -> tuple[str, str | None]:
    path, laterality, out_root, config_json, backend_spec = args
    config = config_from_dict(config_json)
    registry = registry_from_config(config)
    backends = _backend_overrides(backend_spec, registry)
    img = core_io.decode_image(Path(path).read_bytes(), Laterality(laterality))
    outcome = analyze_image(img, config, registry=registry, backends=backends)
    out_dir = Path(out_root) / img.image_id
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in artifact_files(outcome).items():
        (out_dir / name).write_bytes(data)
    if outcome.all_failed:
        causes = "; ".join(
            f"{n}: {s.error}" for n, s in
            (("onh", outcome.onh), ("macula", outcome.macula), ("vessels", outcome.vessels))
        )
        return img.image_id, causes
    return img.image_id, None


@main.command()
@click.option("--input", "input_path", type=click.Path(), required=True, help="image file or corpus dir")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--backend", default=None, help="backend override NAME@VERSION")
@click.option("--laterality", type=click.Choice(["left", "right", "unknown"]), default="unknown")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.pass_context
def analyze(ctx, input_path, out_dir, backend, laterality, config_path, jobs):
    """Run the full offline pipeline; writes rois.json, masks, findings, report."""
    json_errors = ctx.obj["json_errors"]
    src = Path(input_path)
    if not src.exists():
        _fail(2, "io", f"input {input_path} does not exist", json_errors)
    try:
        config = load_config(config_path)
    except (EyasError, OSError) as exc:
        _fail(2, "config", str(exc), json_errors)

    work = []
    if src.is_dir():
        manifest_path = src / "manifest.json"
        if manifest_path.exists():
            manifest = CorpusManifest.load(manifest_path)
            for entry in manifest.entries:
                work.append((str(src / entry.image), entry.laterality, out_dir, config.to_json(), backend))
        else:
            images = sorted([*src.glob("*.png"), *src.glob("*.ppm")])
            if not images:
                _fail(2, "io", f"no images found in {input_path}", json_errors)
            work = [(str(p), laterality, out_dir, config.to_json(), backend) for p in images]
    else:
        work = [(str(src), laterality, out_dir, config.to_json(), backend)]

    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_analysis_worker, work, chunksize=1))
        else:
            results = [_analysis_worker(item) for item in work]
    except EyasError as exc:
        _fail(1, exc.code, str(exc), json_errors)
    except OSError as exc:
        _fail(2, "io", str(exc), json_errors)

    failures = [(image_id, cause) for image_id, cause in results if cause]
    click.echo(f"analyzed {len(results)} images to {out_dir}" + (f", {len(failures)} failed" if failures else ""))
    if failures:
        _fail(1, "analysis", f"{len(failures)} images failed: {failures[0][1]}", json_errors)


def _mask_of(path: Path):
    return core_io.decode_mask_png(path.read_bytes())


@main.command("eval")
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--pred", "pred_dir", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def eval_cmd(ctx, corpus_dir, pred_dir, out_path):
    """Score predictions against corpus ground truth; writes a metrics JSON."""
    json_errors = ctx.obj["json_errors"]
    corpus = Path(corpus_dir)
    preds = Path(pred_dir)
    manifest_path = corpus / "manifest.json"
    if not manifest_path.exists():
        _fail(2, "io", f"no manifest.json in {corpus_dir}", json_errors)
    manifest = CorpusManifest.load(manifest_path)

    seg: dict = {s: {"iou": [], "dice": [], "precision": [], "recall": []} for s in ("onh", "macula", "vessels")}
    av_scores = []
    cls: dict = {"shape": ([], []), "caliber": ([], []), "reflex": ([], [])}
    matched = 0
    try:
        for entry in manifest.entries:
            pdir = preds / entry.id
            findings_path = pdir / "findings.json"
            if not findings_path.exists():
                continue
            matched += 1
            findings = json.loads(findings_path.read_text())
            truth_masks = {
                "onh": _mask_of(corpus / entry.onh_mask),
                "macula": _mask_of(corpus / entry.macula_mask),
                "vessels": _mask_of(corpus / entry.vessel_mask),
            }
            pred_names = {"onh": "onh_mask.png", "macula": "macula_mask.png", "vessels": "vessel_mask.png"}
            for s, name in pred_names.items():
                mask_path = pdir / name
                if not mask_path.exists():
                    continue
                pred_mask = _mask_of(mask_path)
                seg[s]["iou"].append(metrics_mod.iou(pred_mask, truth_masks[s]))
                seg[s]["dice"].append(metrics_mod.dice(pred_mask, truth_masks[s]))
                if pred_mask.foreground_count:
                    seg[s]["precision"].append(metrics_mod.precision(pred_mask, truth_masks[s]))
                if truth_masks[s].foreground_count:
                    seg[s]["recall"].append(metrics_mod.recall(pred_mask, truth_masks[s]))
            av_path = pdir / "av_map.png"
            if av_path.exists():
                pred_vm = VesselMask(
                    vessel=_mask_of(pdir / "vessel_mask.png"),
                    av_label=core_io.decode_avmap_png(av_path.read_bytes()),
                )
                truth_vm = VesselMask(
                    vessel=truth_masks["vessels"],
                    av_label=core_io.decode_avmap_png((corpus / entry.av_map).read_bytes()),
                )
                score = metrics_mod.av_component_accuracy(pred_vm, truth_vm)
                if score is not None:
                    av_scores.append(score)
            pred_labels = {
                "shape": (findings.get("onh") or {}).get("shape"),
                "caliber": (findings.get("vessels") or {}).get("caliber"),
                "reflex": (findings.get("macula") or {}).get("reflex"),
            }
            for fam in cls:
                if pred_labels[fam] is not None:
                    cls[fam][0].append(pred_labels[fam])
                    cls[fam][1].append(entry.labels[fam])
    except EyasError as exc:
        _fail(1, exc.code, str(exc), json_errors)

    if matched == 0:
        _fail(2, "io", "no predictions matched corpus entries", json_errors)

    def mean(xs):
        return sum(xs) / len(xs) if xs else None

    label_sets = {
        "shape": ("round", "oval_vertical", "oval_horizontal"),
        "caliber": ("narrowed", "normal", "widened", "indeterminate"),
        "reflex": ("present", "absent"),
    }
    classification = {}
    for fam, (pred_list, truth_list) in cls.items():
        if not pred_list:
            classification[fam] = None
            continue
        cm = metrics_mod.confusion(pred_list, truth_list, label_sets[fam])
        classification[fam] = {
            "accuracy": metrics_mod.accuracy(cm),
            "per_class": metrics_mod.per_class_accuracy(cm),
        }
    report = {
        "images": matched,
        "segmentation": {
            s: {
                "mean_iou": mean(v["iou"]),
                "mean_dice": mean(v["dice"]),
                "mean_precision": mean(v["precision"]),
                "mean_recall": mean(v["recall"]),
            }
            for s, v in seg.items()
        },
        "classification": classification,
    }
    report["segmentation"]["vessels"]["av_component_accuracy"] = mean(av_scores)
    Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"evaluated {matched} images -> {out_path}")


@main.command("compare-formats")
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.pass_context
def compare_formats_cmd(ctx, corpus_dir, out_path, config_path):
    """Classify ONH shape under all four input formats on the holdout split."""
    json_errors = ctx.obj["json_errors"]
    corpus = Path(corpus_dir)
    manifest_path = corpus / "manifest.json"
    if not manifest_path.exists():
        _fail(2, "io", f"no manifest.json in {corpus_dir}", json_errors)
    try:
        config = load_config(config_path)
        report = compare_formats(CorpusManifest.load(manifest_path), corpus, config)
    except EyasError as exc:
        _fail(1, exc.code, str(exc), json_errors)
    Path(out_path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"format comparison -> {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--single-process", is_flag=True, help="both gateways and all services in one process")
@click.option("--role", type=click.Choice(["gateway", "internal", "onh", "macula", "vessels", "report"]),
              default=None, hidden=True)
@click.pass_context
def serve(ctx, config_path, single_process, role):
    """Start the service graph (client gateway, internal gateway, services)."""
    json_errors = ctx.obj["json_errors"]
    from .services import runner

    try:
        config = load_config(config_path)
    except (EyasError, OSError) as exc:
        _fail(2, "config", str(exc), json_errors)
    try:
        if role:
            runner.serve_role(config, role)
        elif single_process:
            runner.serve_single_process(config)
        else:
            runner.serve_multi_process(config)
    except EyasError as exc:
        _fail(1, exc.code, str(exc), json_errors)


if __name__ == "__main__":
    main()
