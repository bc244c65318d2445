"""Command-line surface.

Subcommands: make-scene, make-dataset, train, densify, render, eval,
make-duos, grad-check. Options can also come from a key=value config file
(``--config``); explicit command-line flags win over config entries.

Exit codes: 0 ok, 2 config error, 3 data error, 4 enhancer unavailable,
5 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from .. import enhance as enhance_mod
from ..consistency import render_any
from ..errors import ConfigError, DataError, EnhanceProtocolError, EnhancerUnavailable, NumericalAbort
from ..field import GRID_MAGIC, load_grid, save_grid
from ..geometry import Intrinsics
from ..gsplat import CLOUD_MAGIC, load_cloud, save_cloud
from ..imgio import write_pfm, write_png
from ..optim import (
    RepresentationSpec,
    TrainConfig,
    init_representation,
    standard_gradient_check,
    train,
    write_loss_trace,
)
from ..pipeline import LoopConfig, evaluate, run_deceptive_loop, write_metrics_csv
from ..volren import RenderConfig
from .dataset import RingGeometry, load_dataset, make_dataset
from .scene import generate_scene, load_scene, save_scene

GRAD_CHECK_TOL = 1e-4


def parse_config_file(path) -> dict:
    """Parse a flat key=value file ('#' starts a comment)."""
    values: dict[str, object] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = _coerce(val)
    return values


def _coerce(val: str):
    low = val.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            continue
    return val


def _resolve(args: argparse.Namespace, config: dict, defaults: dict) -> argparse.Namespace:
    """CLI value if given, else config file value, else built-in default."""
    known = set(vars(args))
    for key in config:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    return args


def _intrinsics(args) -> Intrinsics:
    size = int(args.image_size)
    focal = float(args.focal) if args.focal is not None else 1.1 * size
    return Intrinsics(fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def _load_scene_for(args, data_dir):
    path = os.path.join(data_dir, "scene.json")
    if not os.path.exists(path):
        raise DataError(f"no scene.json under {data_dir} (needed for this command)")
    return load_scene(path)


def _rep_spec(args, dataset_dir) -> RepresentationSpec:
    scene = _load_scene_for(args, dataset_dir)
    res = int(args.grid_resolution)
    return RepresentationSpec(
        kind=args.representation,
        bbox=tuple(map(tuple, scene.bbox.tolist())),
        grid_resolution=(res, res, res),
        gaussian_count=int(args.gaussians),
        init_seed=int(args.seed),
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        representation=args.representation,
        iterations=int(args.iterations),
        batch_size=int(args.batch_size),
        learning_rate=args.learning_rate,
        seed=int(args.seed),
        render=RenderConfig(
            near=float(args.near),
            far=float(args.far),
            samples_per_ray=int(args.samples),
            seed=int(args.seed),
        ),
    )


def _save_representation(path, rep):
    from ..field import RadianceGrid

    if isinstance(rep, RadianceGrid):
        save_grid(path, rep)
    else:
        save_cloud(path, rep)


def _load_representation(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == GRID_MAGIC:
        return load_grid(path)
    if magic == CLOUD_MAGIC:
        return load_cloud(path)
    raise DataError(f"{path}: unknown checkpoint magic {magic!r}")


def _build_enhancer(args, dataset):
    kind = args.enhancer
    if kind == "identity":
        return enhance_mod.IdentityEnhancer()
    if kind == "oracle":
        return enhance_mod.OracleEnhancer(_load_scene_for(args, args.data), dataset.intrinsics)
    if kind == "mock":
        return enhance_mod.MockDegradeEnhancer(_load_scene_for(args, args.data), dataset.intrinsics)
    if kind == "remote":
        if not args.endpoint:
            raise ConfigError("--endpoint is required for the remote enhancer")
        remote = enhance_mod.RemoteEnhancer(args.endpoint)
        remote.healthcheck()  # fail fast instead of per-view fallbacks
        return remote
    raise ConfigError(f"unknown enhancer {kind!r}")


def cmd_make_scene(args, config):
    args = _resolve(args, config, {"seed": 0, "objects": 6})
    os.makedirs(args.out, exist_ok=True)
    scene = generate_scene(int(args.seed), int(args.objects))
    save_scene(os.path.join(args.out, "scene.json"), scene)
    print(f"wrote {os.path.join(args.out, 'scene.json')} ({scene.object_count} objects)")
    return 0


def cmd_make_dataset(args, config):
    args = _resolve(
        args,
        config,
        {"seed": 0, "views": 8, "image_size": 64, "focal": None, "ring_radius": 2.6, "ring_height": 1.1},
    )
    scene = load_scene(args.scene)
    ring = RingGeometry(radius=float(args.ring_radius), height=float(args.ring_height))
    dataset = make_dataset(scene, _intrinsics(args), int(args.views), ring, int(args.seed), args.out)
    n_train = len(dataset.train_views())
    print(f"wrote dataset with {n_train} train / {len(dataset.views) - n_train} test views to {args.out}")
    return 0


_TRAIN_DEFAULTS = {
    "seed": 0,
    "representation": "grid",
    "iterations": 2000,
    "batch_size": 1024,
    "learning_rate": None,
    "grid_resolution": 64,
    "gaussians": 2000,
    "near": 0.5,
    "far": 6.0,
    "samples": 64,
}


def cmd_train(args, config):
    args = _resolve(args, config, _TRAIN_DEFAULTS)
    dataset = load_dataset(args.data)
    cfg = _train_config(args)
    rep = init_representation(_rep_spec(args, args.data))
    rep, trace = train(rep, dataset.train_views(), dataset.intrinsics, cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{args.representation}.ckpt")
    _save_representation(ckpt, rep)
    write_loss_trace(os.path.join(args.out, "loss_trace.csv"), trace)
    test_psnr, test_ssim = evaluate(rep, dataset, cfg.render)
    print(f"trained {args.representation}: test psnr {test_psnr:.2f} dB, ssim {test_ssim:.3f}; checkpoint {ckpt}")
    return 0


def cmd_densify(args, config):
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update(
        {"rounds": 5, "multiplier": 10.0, "keep": 0.8, "enhancer": "identity", "endpoint": None, "fallback": "skip", "initial_iterations": None}
    )
    args = _resolve(args, config, defaults)
    dataset = load_dataset(args.data)
    train_cfg = _train_config(args)
    initial = None
    if args.initial_iterations is not None:
        from dataclasses import replace

        initial = replace(train_cfg, iterations=int(args.initial_iterations))
    loop = LoopConfig(
        rep=_rep_spec(args, args.data),
        train=train_cfg,
        initial_train=initial,
        rounds=int(args.rounds),
        target_multiplier=float(args.multiplier),
        keep_fraction=float(args.keep),
        seed=int(args.seed),
        fallback=args.fallback,
    )
    enhancer = _build_enhancer(args, dataset)
    rep, pool, metrics = run_deceptive_loop(dataset, loop, enhancer)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{args.representation}.ckpt")
    _save_representation(ckpt, rep)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), metrics)
    final = metrics[-1]
    print(
        f"densified to {pool.size} views over {loop.rounds} rounds: "
        f"test psnr {final.test_psnr:.2f} dB, ssim {final.test_ssim:.3f}; checkpoint {ckpt}"
    )
    return 0


def cmd_render(args, config):
    args = _resolve(args, config, {"split": "test", "near": 0.5, "far": 6.0, "samples": 64, "seed": 0})
    dataset = load_dataset(args.data)
    rep = _load_representation(args.checkpoint)
    cfg = RenderConfig(near=float(args.near), far=float(args.far), samples_per_ray=int(args.samples), seed=int(args.seed))
    views = dataset.views if args.split == "all" else [v for v in dataset.views if v.split == args.split]
    if not views:
        raise DataError(f"no views in split {args.split!r}")
    os.makedirs(args.out, exist_ok=True)
    for v in views:
        rendered = render_any(rep, dataset.intrinsics, v.pose, cfg)
        write_png(os.path.join(args.out, f"{v.view_id}.png"), rendered.rgb)
        write_pfm(os.path.join(args.out, f"{v.view_id}.pfm"), rendered.depth_with_validity())
    print(f"rendered {len(views)} views to {args.out}")
    return 0


def cmd_eval(args, config):
    args = _resolve(args, config, {"split": "test", "near": 0.5, "far": 6.0, "samples": 64, "seed": 0})
    dataset = load_dataset(args.data)
    rep = _load_representation(args.checkpoint)
    cfg = RenderConfig(near=float(args.near), far=float(args.far), samples_per_ray=int(args.samples), seed=int(args.seed))
    views = [v for v in dataset.views if v.split == args.split]
    if not views:
        raise DataError(f"no views in split {args.split!r}")
    mean_psnr, mean_ssim = evaluate(rep, dataset, cfg, views=views)
    print(f"{args.split}: psnr {mean_psnr:.3f} dB, ssim {mean_ssim:.4f} over {len(views)} views")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.csv"), "w", encoding="utf-8") as fh:
            fh.write("split,psnr,ssim,views\n")
            fh.write(f"{args.split},{mean_psnr!r},{mean_ssim!r},{len(views)}\n")
    return 0


def cmd_make_duos(args, config):
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update({"fraction": enhance_mod.DEFAULT_DUO_FRACTION, "noise_pairs": False, "noise_std": enhance_mod.DEFAULT_NOISE_STD})
    args = _resolve(args, config, defaults)
    dataset = load_dataset(args.data)
    quartets = enhance_mod.make_duos(
        dataset, _rep_spec(args, args.data), _train_config(args), subset_fraction=float(args.fraction)
    )
    if args.noise_pairs:
        quartets.extend(enhance_mod.make_noise_quartets(dataset, float(args.noise_std), int(args.seed)))
    os.makedirs(args.out, exist_ok=True)
    enhance_mod.write_quartets(args.out, quartets)
    print(f"wrote {len(quartets)} quartets under {os.path.join(args.out, 'quartets')}")
    return 0


def cmd_grad_check(args, config):
    args = _resolve(args, config, {"seed": 0, "representation": "both", "params": 120})
    kinds = ("grid", "gaussians") if args.representation == "both" else (args.representation,)
    worst = 0.0
    for kind in kinds:
        max_rel, n = standard_gradient_check(kind, seed=int(args.seed), n_params=int(args.params))
        print(f"{kind}: max relative error {max_rel:.3e} over {n} parameters")
        worst = max(worst, max_rel)
    if worst >= GRAD_CHECK_TOL:
        raise NumericalAbort(f"gradient check failed: max relative error {worst:.3e} >= {GRAD_CHECK_TOL}")
    print("gradient check passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudoview", description="Sparse-view reconstruction with pseudo-observation densification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("make-scene", help="generate a procedural scene description")
    common(p)
    p.add_argument("--objects", type=int, default=None)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("make-dataset", help="render a ground-truth dataset from a scene")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--views", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None, dest="image_size")
    p.add_argument("--focal", type=float, default=None)
    p.add_argument("--ring-radius", type=float, default=None, dest="ring_radius")
    p.add_argument("--ring-height", type=float, default=None, dest="ring_height")
    p.set_defaults(func=cmd_make_dataset)

    def train_opts(p):
        p.add_argument("--representation", choices=["grid", "gaussians"], default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
        p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
        p.add_argument("--grid-resolution", type=int, default=None, dest="grid_resolution")
        p.add_argument("--gaussians", type=int, default=None)
        p.add_argument("--near", type=float, default=None)
        p.add_argument("--far", type=float, default=None)
        p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("train", help="fit a representation to a dataset's training views")
    common(p)
    p.add_argument("--data", required=True)
    train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("densify", help="run the full pseudo-observation densification loop")
    common(p)
    p.add_argument("--data", required=True)
    train_opts(p)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--multiplier", type=float, default=None)
    p.add_argument("--keep", type=float, default=None)
    p.add_argument("--enhancer", choices=["identity", "oracle", "mock", "remote"], default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--fallback", choices=["skip", "identity"], default=None)
    p.add_argument("--initial-iterations", type=int, default=None, dest="initial_iterations")
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("render", help="render dataset views from a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default=None)
    p.add_argument("--near", type=float, default=None)
    p.add_argument("--far", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against ground truth")
    common(p, out_required=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default=None)
    p.add_argument("--near", type=float, default=None)
    p.add_argument("--far", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-duos", help="build coarse/fine enhancer training quartets")
    common(p)
    p.add_argument("--data", required=True)
    train_opts(p)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--noise-pairs", action="store_true", default=None, dest="noise_pairs")
    p.add_argument("--noise-std", type=float, default=None, dest="noise_std")
    p.set_defaults(func=cmd_make_duos)

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    common(p, out_required=False)
    p.add_argument("--representation", choices=["grid", "gaussians", "both"], default=None)
    p.add_argument("--params", type=int, default=None)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = parse_config_file(args.config) if args.config else {}
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (EnhancerUnavailable, EnhanceProtocolError) as exc:
        print(f"enhancer error: {exc}", file=sys.stderr)
        return 4
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
