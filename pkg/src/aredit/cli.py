"""Operator entry points: dataset, train, cache, edit, ablate, bench, serve."""

import argparse
import json
import os
import sys
import time
from collections import Counter

import numpy as np

from . import cache as cache_mod
from . import editor as editor_mod
from .codec import decode_feature
from .errors import AreditError
from .imgio import load_png, save_png
from .numerics import Image
from .predictor import load_model, make_synthetic, save_model, train
from .runtime import model_runtime
from .shapesworld import generate
from .transformer import init_transformer


def _load_model_arg(path):
    if path:
        return load_model(path)
    return make_synthetic(0)


def cmd_dataset_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    corpus = generate(args.seed, args.count, args.size)
    meta_path = os.path.join(args.out, "meta.jsonl")
    with open(meta_path, "w") as meta:
        for i, (img, spec) in enumerate(corpus):
            save_png(img, os.path.join(args.out, f"img_{i:05d}.png"))
            meta.write(spec.to_json() + "\n")
    colors = Counter(spec.color for _, spec in corpus)
    shapes = Counter(spec.shape for _, spec in corpus)
    print(f"wrote {len(corpus)} images to {args.out}")
    print("colors: " + ", ".join(f"{k}={v}" for k, v in sorted(colors.items())))
    print("shapes: " + ", ".join(f"{k}={v}" for k, v in sorted(shapes.items())))
    return 0


def load_corpus(data_dir):
    from .shapesworld import SceneSpec

    corpus = []
    with open(os.path.join(data_dir, "meta.jsonl")) as fh:
        for i, line in enumerate(fh):
            spec = SceneSpec.from_json(line)
            img = load_png(os.path.join(data_dir, f"img_{i:05d}.png"))
            corpus.append((img, spec))
    return corpus


def cmd_train(args) -> int:
    corpus = [(img, spec.caption) for img, spec in load_corpus(args.data)]
    model = init_transformer(seed=args.seed, width=args.width,
                             layers=args.layers, heads=args.heads)
    print("step,loss")
    trained = train(model, corpus, args.steps, args.lr, args.seed,
                    log=lambda s, l: print(f"{s},{l:.6f}", flush=True),
                    batch_size=args.batch)
    save_model(trained, args.out)
    print(f"wrote model to {args.out} fingerprint={trained.fingerprint.hex()[:16]}")
    return 0


def cmd_cache(args) -> int:
    model = _load_model_arg(args.model)
    codec, schedule = model_runtime(model)
    img = load_png(args.image)
    c = cache_mod.build_cache(img, args.prompt, model, codec, schedule,
                              keep_attention=not args.no_attn)
    cache_mod.save_cache(c, args.out)
    print(f"wrote cache to {args.out} ({os.path.getsize(args.out)} bytes, "
          f"{c.num_levels} scales)")
    return 0


def _load_user_mask(path):
    img = load_png(path)
    return np.asarray(img.pixels).max(axis=2) > 127


def cmd_edit(args) -> int:
    model = _load_model_arg(args.model)
    codec, _ = model_runtime(model)
    t0 = time.perf_counter()
    c = cache_mod.load_cache(args.cache)
    load_ms = (time.perf_counter() - t0) * 1e3
    cfg = editor_mod.EditConfig(
        gamma=args.gamma, tau=args.tau, mask_mode=args.mask_mode,
        attention_control=args.attn, seed=args.seed,
        temperature=args.temperature,
        emit_intermediate=args.emit_scales is not None,
    )
    user_mask = _load_user_mask(args.user_mask) if args.user_mask else None
    result = editor_mod.edit(c, args.prompt, model, codec, cfg, user_mask=user_mask)
    save_png(result.image, args.out)
    if args.emit_scales:
        os.makedirs(args.emit_scales, exist_ok=True)
        for k, im in enumerate(result.intermediate_decodes, start=1):
            save_png(im, os.path.join(args.emit_scales, f"scale_{k:02d}.png"))
    if args.emit_masks:
        os.makedirs(args.emit_masks, exist_ok=True)
        for i, m in enumerate(result.masks):
            scale = cfg.gamma + i + 1
            save_png(editor_mod.mask_heatmap(m),
                     os.path.join(args.emit_masks, f"mask_{scale:02d}.png"))
            with open(os.path.join(args.emit_masks, f"mask_{scale:02d}.rle"), "wb") as fh:
                fh.write(editor_mod.mask_to_rle(m))
    timing = dict(result.timing)
    timing["cache_load_ms"] = load_ms
    print(f"wrote {args.out} flagged={result.flagged_per_scale} "
          + " ".join(f"{k}={v:.1f}" for k, v in timing.items()))
    return 0


def cmd_ablate(args) -> int:
    model = _load_model_arg(args.model)
    codec, _ = model_runtime(model)
    c = cache_mod.load_cache(args.cache)
    gammas = sorted(int(g) for g in args.gammas.split(","))
    taus = sorted(float(t) for t in args.taus.split(","))
    tiles = []
    for g in gammas:
        row = []
        for t in taus:
            cfg = editor_mod.EditConfig(gamma=g, tau=t, seed=args.seed)
            row.append(editor_mod.edit(c, args.prompt, model, codec, cfg).image)
        tiles.append(row)
    h, w = tiles[0][0].height, tiles[0][0].width
    sep = 2
    grid = np.full((len(gammas) * h + (len(gammas) - 1) * sep,
                    len(taus) * w + (len(taus) - 1) * sep, 3), 255, dtype=np.uint8)
    for i, row in enumerate(tiles):
        for j, im in enumerate(row):
            y, x = i * (h + sep), j * (w + sep)
            grid[y:y + h, x:x + w] = im.pixels
    save_png(Image.from_array(grid), args.out)
    print(f"wrote {len(gammas)}x{len(taus)} montage to {args.out} "
          f"(rows gamma={gammas}, cols tau={taus})")
    return 0


def cmd_bench(args) -> int:
    model = _load_model_arg(args.model)
    codec, schedule = model_runtime(model)
    img = load_png(args.image)
    cfg = editor_mod.EditConfig(seed=args.seed)
    # warm up code paths (JIT compilation, lazy imports) outside the clock
    warm = cache_mod.build_cache(img, args.src, model, codec, schedule)
    editor_mod.edit(warm, args.tgt, model, codec, cfg)
    full_times, rerun_times = [], []
    for _ in range(args.runs):
        t0 = time.perf_counter()
        c = cache_mod.build_cache(img, args.src, model, codec, schedule)
        editor_mod.edit(c, args.tgt, model, codec, cfg)
        full_times.append((time.perf_counter() - t0) * 1e3)
        t0 = time.perf_counter()
        editor_mod.edit(warm, args.tgt, model, codec, cfg)
        rerun_times.append((time.perf_counter() - t0) * 1e3)
    full_ms = float(np.mean(full_times))
    rerun_ms = float(np.mean(rerun_times))
    report = {"full_ms": round(full_ms, 3), "rerun_ms": round(rerun_ms, 3),
              "full_min_ms": round(min(full_times), 3),
              "rerun_min_ms": round(min(rerun_times), 3),
              "ratio": round(full_ms / rerun_ms, 3), "runs": args.runs}
    if args.json:
        print(json.dumps(report))
    else:
        print(f"full {full_ms:.1f} ms (min {min(full_times):.1f}), "
              f"cached rerun {rerun_ms:.1f} ms (min {min(rerun_times):.1f}), "
              f"reuse speedup x{report['ratio']}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    model = None
    model_path = args.model or os.environ.get("AREDIT_MODEL")
    if model_path:
        model = load_model(model_path)
    app = create_app(
        model=model,
        store_dir=args.store or os.environ.get("AREDIT_STORE"),
        console_dir=args.console or os.environ.get("AREDIT_CONSOLE", "frontend/dist"),
    )
    port = args.port or int(os.environ.get("AREDIT_PORT", "8000"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aredit",
                                description="cache-and-edit image editing pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="corpus tools")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    g = ds_sub.add_parser("gen", help="generate a captioned shapes corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.set_defaults(func=cmd_dataset_gen)

    t = sub.add_parser("train", help="train the transformer backend")
    t.add_argument("--data", required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--width", type=int, default=128)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--batch", type=int, default=8)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cache", help="build and persist an edit cache")
    c.add_argument("--image", required=True)
    c.add_argument("--prompt", required=True)
    c.add_argument("--model", default=None)
    c.add_argument("--out", required=True)
    c.add_argument("--no-attn", action="store_true")
    c.set_defaults(func=cmd_cache)

    e = sub.add_parser("edit", help="run a text-guided edit against a cache")
    e.add_argument("--cache", required=True)
    e.add_argument("--prompt", required=True)
    e.add_argument("--gamma", type=int, default=None)
    e.add_argument("--tau", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--temperature", type=float, default=1.0)
    e.add_argument("--out", required=True)
    e.add_argument("--attn", action="store_true")
    e.add_argument("--mask-mode", choices=["bitwise", "spatial"], default="bitwise")
    e.add_argument("--emit-scales", default=None)
    e.add_argument("--emit-masks", default=None)
    e.add_argument("--user-mask", default=None)
    e.add_argument("--model", default=None)
    e.set_defaults(func=cmd_edit)

    a = sub.add_parser("ablate", help="render a gamma x tau grid montage")
    a.add_argument("--cache", required=True)
    a.add_argument("--prompt", required=True)
    a.add_argument("--gammas", required=True)
    a.add_argument("--taus", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--model", default=None)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="full run vs cached-rerun timing")
    b.add_argument("--image", required=True)
    b.add_argument("--src", required=True)
    b.add_argument("--tgt", required=True)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--json", action="store_true")
    b.add_argument("--model", default=None)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("serve", help="serve the HTTP API and console")
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--model", default=None)
    s.add_argument("--store", default=None)
    s.add_argument("--console", default=None)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AreditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
