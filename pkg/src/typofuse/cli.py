"""Command-line surface: render, embed, eval, sweep.

Exit codes: 0 success, 1 IO/runtime failure, 2 bad arguments or invalid
configuration. ``--json`` switches the human tables to machine-readable
JSON on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import knn
from .encoders import EncoderHandle
from .errors import (
    ConfigurationError,
    InvalidInputError,
    ManifestError,
    TypofuseError,
)
from .harness import (
    CSV_COLUMNS,
    EncoderPair,
    ExperimentConfig,
    FactorGrid,
    Mode,
    factor_sweep,
    run_experiment,
    sweep_table,
    _ExperimentEmbedder,
)
from .ingest import load_image, load_manifest, load_query_manifest
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus
from .typograph import Location, RenderSpec, render_text

CACHE_ENV = "TYPOFUSE_CACHE"


def _error(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _render_spec_from_args(args) -> RenderSpec:
    return RenderSpec(
        font_size_ratio=args.ratio,
        color=args.color,
        location=args.location,
        max_width_fraction=args.max_width_frac,
        margin_fraction=args.margin,
        font_asset=args.font,
    )


def cmd_render(args) -> int:
    try:
        spec = _render_spec_from_args(args)
    except InvalidInputError as exc:
        return _error(str(exc), 2)
    try:
        image = load_image(args.image)
        rendered = render_text(image, args.text, spec)
        rendered.image.save(args.out, format="PNG")
    except TypofuseError as exc:
        return _error(str(exc), 1)
    except OSError as exc:
        return _error(f"cannot write {args.out}: {exc}", 1)
    print(
        json.dumps(
            {
                "applied_font_size": rendered.applied_font_size,
                "text_bbox": list(rendered.text_bbox) if rendered.text_bbox else None,
                "out": str(args.out),
            }
        )
    )
    return 0


def _handle_from_args(kind: str, args, modality: str) -> EncoderHandle:
    if kind == "reference":
        seed = args.text_seed if modality == "text" else args.encoder_seed
        if modality == "text":
            return EncoderHandle.reference_text(seed=seed, dim=args.encoder_dim)
        return EncoderHandle.reference_image(seed=seed, dim=args.encoder_dim)
    if kind == "remote":
        if not args.endpoint or not args.model:
            raise ConfigurationError("remote encoders need --endpoint and --model")
        return EncoderHandle.remote(args.endpoint, args.model, dim=args.encoder_dim)
    raise ConfigurationError(f"unknown encoder kind {kind!r}")


def _cache_root(explicit) -> Path | None:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(explicit) if explicit else None


def cmd_embed(args) -> int:
    try:
        mode = Mode.parse(args.mode)
        image_handle = _handle_from_args(args.encoder, args, "image")
        text_handle = None
        if mode.fusion is not None:
            text_handle = _handle_from_args(args.text_encoder or args.encoder, args, "text")
        render_spec = _render_spec_from_args(args) if mode.rendered else None
        config = ExperimentConfig(
            mode=mode,
            encoders=EncoderPair(image_handle, text_handle),
            render_spec=render_spec,
            cache_root=_cache_root(args.cache_root),
            workers=args.workers,
        )
        listings = load_manifest(args.manifest)
    except (InvalidInputError, ConfigurationError, ManifestError) as exc:
        return _error(str(exc), 2)
    try:
        embedder = _ExperimentEmbedder(config)
        embeddings = embedder.embed_all(listings)
        index = knn.build_index(
            [(listing.id, emb) for listing, emb in zip(listings, embeddings)]
        )
        knn.save_index(index, args.out_store)
    except TypofuseError as exc:
        return _error(str(exc), 1)
    except OSError as exc:
        return _error(f"cannot write {args.out_store}: {exc}", 1)
    print(
        json.dumps(
            {
                "out_store": str(args.out_store),
                "count": index.count,
                "dim": index.dim,
                "model_id": index.model_id,
            }
        )
    )
    return 0


def _load_json(path: str | Path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{what} is not valid JSON: {exc}") from exc


def _encoder_from_config(cfg: dict, modality: str) -> EncoderHandle:
    kind = cfg.get("kind", "reference")
    if kind == "reference":
        seed = int(cfg.get("seed", 0))
        dim = int(cfg.get("dim", 256))
        if modality == "text":
            return EncoderHandle.reference_text(seed=seed, dim=dim)
        return EncoderHandle.reference_image(
            seed=seed, dim=dim, grid=int(cfg.get("grid", 16))
        )
    if kind == "remote":
        if "endpoint" not in cfg or "model" not in cfg:
            raise ConfigurationError("remote encoder config needs endpoint and model")
        return EncoderHandle.remote(
            cfg["endpoint"],
            cfg["model"],
            dim=int(cfg.get("dim", 0)),
            timeout=float(cfg.get("timeout", 10.0)),
            max_batch=int(cfg.get("max_batch", 64)),
        )
    raise ConfigurationError(f"unknown encoder kind {kind!r}")


def _render_spec_from_config(cfg: dict | None) -> RenderSpec:
    cfg = cfg or {}
    return RenderSpec(
        font_size_ratio=float(cfg.get("font_size_ratio", 1.0)),
        color=cfg.get("color", "black"),
        location=cfg.get("location", "center"),
        max_width_fraction=float(cfg.get("max_width_fraction", 0.9)),
        margin_fraction=float(cfg.get("margin_fraction", 0.05)),
        font_asset=cfg.get("font_asset", "DejaVuSans"),
    )


class _RunSetup:
    """Everything cmd_eval/cmd_sweep need, resolved from file plus overrides."""

    def __init__(self, args):
        raw = _load_json(args.config, "config")
        base = Path(args.config).parent
        mode = Mode.parse(args.mode or raw.get("mode", "rendered-sum"))
        encoders_cfg = raw.get("encoders", {})
        image = _encoder_from_config(encoders_cfg.get("image", {}), "image")
        text = None
        if mode.fusion is not None or "text" in encoders_cfg:
            text = _encoder_from_config(encoders_cfg.get("text", {}), "text")
        render_spec = _render_spec_from_config(raw.get("render")) if (
            mode.rendered or raw.get("render") is not None
        ) else None
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        cache = _cache_root(args.cache_root or raw.get("cache_root"))
        self.config = ExperimentConfig(
            mode=mode,
            encoders=EncoderPair(image, text),
            render_spec=render_spec,
            k_values=tuple(raw.get("k", [1, 3])),
            seed=seed,
            cache_root=cache,
            workers=int(raw.get("workers", 4)),
        )
        self.out_dir = Path(args.out_dir or raw.get("out_dir", "reports"))
        dataset = raw.get("dataset")
        if not dataset:
            raise ConfigurationError("config needs a dataset section")
        if "synthetic" in dataset:
            spec_cfg = dict(dataset["synthetic"])
            spec_cfg.setdefault("seed", seed)
            corpus_dir = base / dataset.get("dir", "corpus")
            self.queries, self.products = generate_synthetic_corpus(
                SyntheticCorpusSpec(**spec_cfg), corpus_dir
            )
        else:
            for key in ("queries", "products"):
                if key not in dataset:
                    raise ConfigurationError(f"dataset section needs {key!r}")
            summarizer = raw.get("summarizer")
            budget = int(raw.get("char_budget", 120))
            self.queries = load_query_manifest(base / dataset["queries"], summarizer, budget)
            self.products = load_manifest(base / dataset["products"], summarizer, budget)


def _write_reports(out_dir: Path, report) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    json_path.write_text(report.to_json(), encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(report.csv_rows())
    return json_path, csv_path


def cmd_eval(args) -> int:
    try:
        setup = _RunSetup(args)
    except (ConfigurationError, InvalidInputError, ManifestError, TypeError) as exc:
        return _error(str(exc), 2)
    try:
        report = run_experiment(setup.config, setup.queries, setup.products)
    except ConfigurationError as exc:
        return _error(str(exc), 2)
    except TypofuseError as exc:
        return _error(str(exc), 1)
    json_path, csv_path = _write_reports(setup.out_dir, report)
    if args.json:
        print(report.to_json(), end="")
    else:
        print(f"mode={report.config['mode']}  queries={report.n_queries}  "
              f"products={report.n_products}")
        for k in sorted(report.accuracy):
            print(f"  Acc@{k}: {report.accuracy[k]:.4f}")
        print(f"reports: {json_path}, {csv_path}")
    return 0


def _grid_from_file(path: str) -> FactorGrid:
    raw = _load_json(path, "grid")
    return FactorGrid(
        font_size_ratios=tuple(float(r) for r in raw.get("font_size_ratio", [])),
        colors=tuple(raw.get("color", [])),
        locations=tuple(Location.parse(v) for v in raw.get("location", [])),
    )


def cmd_sweep(args) -> int:
    try:
        setup = _RunSetup(args)
        grid = _grid_from_file(args.grid)
    except (ConfigurationError, InvalidInputError, ManifestError, TypeError) as exc:
        return _error(str(exc), 2)
    try:
        cells = factor_sweep(setup.config, grid, setup.queries, setup.products)
    except (ConfigurationError, InvalidInputError) as exc:
        return _error(str(exc), 2)
    except TypofuseError as exc:
        return _error(str(exc), 1)
    rows = sweep_table(cells)
    setup.out_dir.mkdir(parents=True, exist_ok=True)
    json_path = setup.out_dir / "sweep.json"
    csv_path = setup.out_dir / "sweep.csv"
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", "utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if args.json:
        print(json.dumps(rows))
    else:
        print(f"{len(cells)} sweep reports ({len(rows)} table rows)")
        for row in rows:
            print(
                f"  ratio={row['font_size_ratio']:<5} color={row['color']} "
                f"loc={row['location']:<6} mode={row['mode']:<19} "
                f"Acc@{row['k']}={row['accuracy']:.4f}"
            )
        print(f"reports: {json_path}, {csv_path}")
    return 0


def _positive_ratio(value: str) -> float:
    ratio = float(value)
    if not 0.0 < ratio <= 1.0:
        raise argparse.ArgumentTypeError(f"ratio must be in (0, 1], got {value}")
    return ratio


def _add_render_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--ratio", type=_positive_ratio, default=1.0,
                        help="font size as a fraction of the max fitting size")
    parser.add_argument("--color", default="black",
                        help="named color or R,G,B (default black)")
    parser.add_argument("--location", default="center",
                        choices=["top", "center", "middle", "bottom"])
    parser.add_argument("--margin", type=float, default=0.05)
    parser.add_argument("--max-width-frac", type=float, default=0.9)
    parser.add_argument("--font", default="DejaVuSans",
                        help="bundled font name or a .ttf path")


def _parse_color_flag(value: str):
    if "," in value:
        return tuple(int(c) for c in value.split(","))
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typofuse",
        description="Render listing text onto product images and evaluate retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_render = sub.add_parser("render", help="draw text onto one image")
    p_render.add_argument("--image", required=True)
    p_render.add_argument("--text", required=True)
    p_render.add_argument("--out", required=True)
    _add_render_flags(p_render)
    p_render.set_defaults(func=cmd_render)

    p_embed = sub.add_parser("embed", help="embed a manifest into a knn store")
    p_embed.add_argument("--manifest", required=True)
    p_embed.add_argument("--mode", required=True)
    p_embed.add_argument("--encoder", default="reference",
                         choices=["reference", "remote"])
    p_embed.add_argument("--text-encoder", choices=["reference", "remote"])
    p_embed.add_argument("--encoder-seed", type=int, default=0)
    p_embed.add_argument("--text-seed", type=int, default=1)
    p_embed.add_argument("--encoder-dim", type=int, default=256)
    p_embed.add_argument("--endpoint")
    p_embed.add_argument("--model")
    p_embed.add_argument("--out-store", required=True)
    p_embed.add_argument("--cache-root")
    p_embed.add_argument("--workers", type=int, default=4)
    _add_render_flags(p_embed)
    p_embed.set_defaults(func=cmd_embed)

    for name, func in (("eval", cmd_eval), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} an experiment config")
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir")
        p.add_argument("--mode")
        p.add_argument("--seed", type=int)
        p.add_argument("--cache-root")
        p.add_argument("--json", action="store_true")
        if name == "sweep":
            p.add_argument("--grid", required=True)
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "color"):
        args.color = _parse_color_flag(args.color)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
