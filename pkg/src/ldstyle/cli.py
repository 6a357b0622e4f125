"""Command-line entry point binding all modules.

Exit codes: 0 success, 1 user error (bad flags, missing files), 2
internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

from .errors import LdstyleError

WEIGHTS_DIR_ENV = "LDSTYLE_WEIGHTS_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; user errors are 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _find_weights(path, kind: str):
    """Resolve a weights path directly or under LDSTYLE_WEIGHTS_DIR."""
    if path is None:
        return None
    if os.path.exists(path):
        return path
    search = os.environ.get(WEIGHTS_DIR_ENV)
    if search:
        candidate = os.path.join(search, path)
        if os.path.exists(candidate):
            return candidate
    raise LdstyleError(f"{kind} weights not found: {path}")


def _load_model(ckpt_path):
    from .trainer import load_checkpoint, model_from_checkpoint, resolve_encoder

    if not os.path.exists(ckpt_path):
        raise LdstyleError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    model = model_from_checkpoint(ckpt)
    model.eval()
    return model, resolve_encoder(ckpt.config_text), ckpt


def _parse_weighted_styles(specs):
    """Parse repeated `path.png:weight` flags."""
    paths, weights = [], []
    for spec in specs:
        path, sep, weight = spec.rpartition(":")
        if not sep or not path:
            raise LdstyleError(f"expected style.png:weight, got {spec!r}")
        try:
            weights.append(float(weight))
        except ValueError as exc:
            raise LdstyleError(f"bad style weight in {spec!r}") from exc
        paths.append(path)
    return paths, weights


def _parse_regions(specs):
    """Parse repeated `mask.png:style.png` flags."""
    out = []
    for spec in specs:
        mask_path, sep, style_path = spec.partition(":")
        if not sep or not mask_path or not style_path:
            raise LdstyleError(f"expected mask.png:style.png, got {spec!r}")
        out.append((mask_path, style_path))
    return out


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def build_parser() -> _Parser:
    parser = _Parser(prog="ldstyle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a transfer model")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--content-dir")
    p.add_argument("--style-dir")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--iterations", type=int, dest="max_iterations")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth-backend", choices=("stub", "monodepth"))
    p.add_argument("--depth-weights")
    p.add_argument("--encoder-weights")

    p = sub.add_parser("stylize", help="stylize one image")
    p.add_argument("-c", "--content", required=True)
    p.add_argument("-s", "--style", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--alpha", type=float, default=1.0)

    p = sub.add_parser("interpolate", help="blend several styles")
    p.add_argument("-c", "--content", required=True)
    p.add_argument("--style", action="append", required=True,
                   metavar="PATH:WEIGHT")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("mask-stylize", help="per-region styles via masks")
    p.add_argument("-c", "--content", required=True)
    p.add_argument("--region", action="append", required=True,
                   metavar="MASK:STYLE")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("sweep", help="loss-weight ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--lap", type=_float_list, required=True, metavar="V1,V2,...")
    p.add_argument("--depth", type=_float_list, required=True, metavar="V1,V2,...")
    p.add_argument("--holdout-content")
    p.add_argument("--holdout-style")
    p.add_argument("--out", dest="out_dir")

    p = sub.add_parser("evaluate", help="structure-consistency SSIM report")
    p.add_argument("--pairs-dir", required=True,
                   help="directory with content/ and stylized/ subdirectories")
    p.add_argument("--out", required=True)
    p.add_argument("--depth-backend", choices=("stub", "monodepth"), default="stub")
    p.add_argument("--depth-weights")

    p = sub.add_parser("bench", help="stylization speed benchmark")
    p.add_argument("--resolutions", type=_int_list, default=[256, 512])
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--max-queue", type=int, default=8)
    p.add_argument("--allow-origin")

    return parser


def _cmd_train(args) -> int:
    from .trainer import TrainConfig, load_train_config, train

    overrides = dict(content_dir=args.content_dir, style_dir=args.style_dir,
                     out_dir=args.out_dir, max_iterations=args.max_iterations,
                     seed=args.seed, depth_backend=args.depth_backend,
                     depth_weights=args.depth_weights,
                     encoder_weights=args.encoder_weights)
    if args.config:
        cfg = load_train_config(args.config, **overrides)
    else:
        supplied = {k: v for k, v in overrides.items() if v is not None}
        if "content_dir" not in supplied or "style_dir" not in supplied:
            raise LdstyleError("train needs --config or both --content-dir and --style-dir")
        cfg = TrainConfig(**supplied)
    if cfg.encoder_weights:
        cfg.encoder_weights = _find_weights(cfg.encoder_weights, "encoder")
    if cfg.depth_weights:
        cfg.depth_weights = _find_weights(cfg.depth_weights, "depth")
    ckpt = train(cfg)
    print(f"trained {ckpt.iteration} iterations -> {os.path.join(cfg.out_dir, 'checkpoint.ldst')}")
    return 0


def _cmd_stylize(args) -> int:
    from .controls import stylize_with_alpha
    from .imaging import load_image, save_image

    model, enc, _ = _load_model(args.ckpt)
    content = load_image(args.content)
    style = load_image(args.style)
    out = stylize_with_alpha(model, enc, content, style, args.alpha)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    from .controls import StyleMix, stylize_multi
    from .imaging import load_image, save_image

    model, enc, _ = _load_model(args.ckpt)
    paths, weights = _parse_weighted_styles(args.style)
    mix = StyleMix(styles=[load_image(p) for p in paths], weights=weights)
    out = stylize_multi(model, enc, load_image(args.content), mix)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_mask_stylize(args) -> int:
    from .controls import RegionMask, stylize_spatial
    from .imaging import load_image, save_image, luminance

    model, enc, _ = _load_model(args.ckpt)
    content = load_image(args.content)
    regions = []
    for idx, (mask_path, style_path) in enumerate(_parse_regions(args.region)):
        mask = luminance(load_image(mask_path)).values
        regions.append((RegionMask(mask=mask, style_index=idx), load_image(style_path)))
    out = stylize_spatial(model, enc, content, regions)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from .trainer import ablation_sweep, load_train_config

    cfg = load_train_config(args.config, out_dir=args.out_dir)
    cells = ablation_sweep(cfg, args.lap, args.depth,
                           heldout_content_dir=args.holdout_content,
                           heldout_style_dir=args.holdout_style)
    for cell in cells:
        if cell.error:
            print(f"lap={cell.lambda_lap:g} depth={cell.lambda_depth:g}: FAILED {cell.error}")
        else:
            r = cell.report
            print(f"lap={cell.lambda_lap:g} depth={cell.lambda_depth:g}: "
                  f"content {r.content_ssim:.3f} depth {r.depth_ssim:.3f} "
                  f"edge {r.edge_ssim:.3f} -> {cell.checkpoint_path}")
    return 0


def _cmd_evaluate(args) -> int:
    from .depth import make_depth_backend
    from .evaluation import render_csv, render_table, structure_consistency
    from .imaging import load_image

    content_dir = os.path.join(args.pairs_dir, "content")
    stylized_dir = os.path.join(args.pairs_dir, "stylized")
    if not os.path.isdir(content_dir) or not os.path.isdir(stylized_dir):
        raise LdstyleError(
            f"{args.pairs_dir} must contain content/ and stylized/ subdirectories")
    names = sorted(set(os.listdir(content_dir)) & set(os.listdir(stylized_dir)))
    pairs = [(load_image(os.path.join(content_dir, n)),
              load_image(os.path.join(stylized_dir, n))) for n in names]
    if not pairs:
        raise LdstyleError(f"no matching content/stylized filenames under {args.pairs_dir}")
    depth_weights = _find_weights(args.depth_weights, "depth") if args.depth_weights else None
    backend = make_depth_backend(args.depth_backend, depth_weights)
    report = structure_consistency(pairs, backend)
    print(render_table([report]))
    _atomic_write_text(args.out, render_csv([report]))
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from .evaluation import render_csv, render_table, speed_benchmark

    if args.ckpt:
        model, enc, _ = _load_model(args.ckpt)
    else:
        from .encoder import random_encoder
        from .transfer import init_transfer_model

        model = init_transfer_model(args.seed)
        enc = random_encoder(args.seed)
    reports = speed_benchmark(model, enc, args.resolutions,
                              n_runs=args.runs, warmup=args.warmup, seed=args.seed)
    print(render_table(reports))
    if args.out:
        _atomic_write_text(args.out, render_csv(reports))
        print(f"wrote {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    model, enc, ckpt = _load_model(args.ckpt)
    app = create_app(model, enc,
                     checkpoint_path=args.ckpt,
                     workers=args.workers,
                     max_queue=args.max_queue,
                     allow_origin=args.allow_origin)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _atomic_write_text(path, text: str) -> None:
    import tempfile

    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_COMMANDS = {
    "train": _cmd_train,
    "stylize": _cmd_stylize,
    "interpolate": _cmd_interpolate,
    "mask-stylize": _cmd_mask_stylize,
    "sweep": _cmd_sweep,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit:
        raise
    except LdstyleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
