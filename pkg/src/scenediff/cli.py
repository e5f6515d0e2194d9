"""Command-line entry point: gen-data, train, sample, eval, grad-check.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric failure.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, ablation_variants, load_config
from .decoder import ground_truth_bundle
from .errors import ConfigError, DataError, DivergenceError, NumericError, ShapeError
from .gradcheck import THRESHOLD, format_table, run_grad_checks
from .metrics import evaluate
from .model import derive_seed, load_model
from .plotting import ablation_figure, distribution_figure, scene_svg
from .scenario import generate_synthetic_scene, load_scene, preprocess_world_centric, save_scene
from .training import train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scenediff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, **{args.seed_field: args.seed}))
    return cfg


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {path}: {e.strerror}") from None
    return Path(path)


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e.strerror}") from None


def load_scene_dir(path, limit=0):
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"scene directory {path} does not exist")
    files = sorted(path.glob("*.json"))
    if not files:
        raise DataError(f"scene directory {path} has no .json scene files")
    if limit:
        files = files[:limit]
    return [load_scene(f) for f in files]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    cfg = _config(args)
    out = _mkdir(args.out or cfg.paths.data_dir)
    count = cfg.data_count if args.count is None else args.count
    if count < 0:
        raise ConfigError("--count must be >= 0")
    for i in range(count):
        scene = generate_synthetic_scene(derive_seed(cfg.seeds.data, i), cfg.scenario)
        save_scene(scene, out / f"scene_{i:06}.json")
    print(f"wrote {count} scenes to {out}")
    return EXIT_OK


def _train(cfg, scenes, out, tag=""):
    """Train one config; final checkpoint and JSONL log go under ``out``."""
    log_path = out / f"train_log{tag}.jsonl"
    ckpt_path = out / f"checkpoint_final{tag}.json"
    with open(log_path, "w") as fh:
        def on_step(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        def on_checkpoint(step, model):
            model.save(out / f"checkpoint_{step:06}{tag}.json")

        try:
            model, records = train_loop(scenes, cfg.model, cfg.loss, cfg.train, cfg.seeds.init, cfg.seeds.train,
                                        on_step=on_step, on_checkpoint=on_checkpoint)
        except DivergenceError as e:
            fh.write(json.dumps({"step": e.step, "diverged": e.term}, sort_keys=True) + "\n")
            raise
    model.save(ckpt_path)
    return model, records, ckpt_path


def cmd_train(args):
    cfg = _config(args)
    scenes = load_scene_dir(args.data or cfg.paths.data_dir)
    out = _mkdir(args.out or cfg.paths.checkpoint_dir)
    _, records, ckpt = _train(cfg, scenes, out)
    first, last = records[0]["w_ade"], records[-1]["w_ade"]
    print(f"trained {len(records)} steps; w_ade {first:.4f} -> {last:.4f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_sample(args):
    cfg = _config(args)
    model = load_model(args.checkpoint)
    scene = load_scene(args.scene)
    inputs = preprocess_world_centric(scene)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    bundles = [model.sample(inputs, derive_seed(cfg.seeds.sample, k)) for k in range(args.n)]
    out = _mkdir(args.out or cfg.paths.report_dir)
    doc = {"samples": [b.to_dict() for b in bundles]}
    _write(out / "samples.json", json.dumps(doc, sort_keys=True) + "\n")
    if args.svg:
        _write(out / "samples.svg", scene_svg(scene, bundles))
    print(f"wrote {len(bundles)} samples for {scene.scene_id} to {out}")
    return EXIT_OK


def _report(report, out, stem):
    _write(out / f"{stem}.json", report.to_json())
    _write(out / f"{stem}.csv", report.to_csv())


def _figures(model, scenes, cfg, out, stem):
    generated, reference = [], []
    for si, scene in enumerate(sorted(scenes, key=lambda s: s.scene_id)):
        inputs = preprocess_world_centric(scene)
        if inputs.n_predicted == 0:
            continue
        reference.append(ground_truth_bundle(inputs))
        generated += [model.sample(inputs, derive_seed(cfg.seeds.sample, si, k)) for k in range(cfg.metrics.n_samples)]
    distribution_figure(generated, reference, out / f"{stem}_distributions.png")


def cmd_eval(args):
    cfg = _config(args)
    scenes = load_scene_dir(args.scenes or cfg.paths.data_dir, cfg.metrics.scene_count)
    out = _mkdir(args.out or cfg.paths.report_dir)
    kcfg, n, seed = cfg.metrics.kernel, cfg.metrics.n_samples, cfg.seeds.sample
    if args.ablate:
        train_scenes = load_scene_dir(args.train_data or cfg.paths.data_dir)
        reports = {}
        for name, variant in ablation_variants(cfg).items():
            model, _, _ = _train(variant, train_scenes, out, tag=f"_{name}")
            reports[name] = evaluate(model, scenes, n, seed, kcfg)
            _report(reports[name], out, f"report_{name}")
            print(f"{name}: ade {reports[name].ade:.4f} fde {reports[name].fde:.4f}")
        ablation_figure(reports, out / "ablation.png")
        return EXIT_OK
    if not args.checkpoint:
        raise UsageError("eval: --checkpoint is required unless --ablate is given")
    model = load_model(args.checkpoint)
    report = evaluate(model, scenes, n, seed, kcfg)
    _report(report, out, "report")
    _figures(model, scenes, cfg, out, "report")
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_grad_check(args):
    cfg = _config(args)
    results = run_grad_checks(seed=cfg.seeds.init, max_coords=args.max_coords)
    print(format_table(results, args.threshold))
    failing = [r.name for r in results if not r.passed(args.threshold)]
    if failing:
        print(f"failing blocks: {', '.join(failing)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="scenediff", description="Diffusion-based multi-agent scenario generation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_field, seed_help):
        sp.add_argument("--config", metavar="PATH", help="run configuration JSON (defaults apply if omitted)")
        sp.add_argument("--seed", type=int, metavar="N", help=seed_help)
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides the config path)")
        sp.set_defaults(seed_field=seed_field)

    g = sub.add_parser("gen-data", help="write synthetic scene files")
    common(g, "data", "override seeds.data")
    g.add_argument("--count", type=int, metavar="N", help="number of scenes (default: config data_count)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus JSONL log")
    common(t, "train", "override seeds.train")
    t.add_argument("--data", metavar="DIR", help="scene directory (default: config paths.data_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample futures for one scene")
    common(s, "sample", "override seeds.sample")
    s.add_argument("--checkpoint", required=True, metavar="PATH", help="model checkpoint")
    s.add_argument("--scene", required=True, metavar="PATH", help="scene JSON file")
    s.add_argument("--n", type=int, default=1, metavar="N", help="number of samples (default 1)")
    s.add_argument("--svg", action="store_true", help="also write samples.svg")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score a checkpoint, or run the ablation matrix")
    common(e, "sample", "override seeds.sample")
    e.add_argument("--checkpoint", metavar="PATH", help="model checkpoint (not used with --ablate)")
    e.add_argument("--scenes", metavar="DIR", help="evaluation scene directory (default: config paths.data_dir)")
    e.add_argument("--ablate", action="store_true", help="train and score the four architecture variants")
    e.add_argument("--train-data", metavar="DIR", help="training scenes for --ablate (default: config paths.data_dir)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of every block")
    common(c, "init", "override seeds.init")
    c.add_argument("--threshold", type=float, default=THRESHOLD, help=f"max relative error (default {THRESHOLD})")
    c.add_argument("--max-coords", type=int, default=40, metavar="N", help="coordinates probed per parameter")
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
