"""Command-line entry point for harness picking."""
import os
import sys
import json
import logging
import argparse
from pathlib import Path
from typing import List, Optional

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.active_learning import ActiveLearnConfig, STATS_COLUMNS, active_learn, make_inferencer  # noqa: E402
from src.artifacts import ArtifactWriter, atomic_write_text, dumps_json  # noqa: E402
from src.asp_model import AspModel  # noqa: E402
from src.config import PipelineConfig, load_config  # noqa: E402
from src.dataset import action_counts, load_dataset  # noqa: E402
from src.depth_image import DepthImage  # noqa: E402
from src.errors import DataError, HarnessPickingError, InvalidDepthError, TrainingDivergenceError  # noqa: E402
from src.grasp_fge import CameraCalibration, Grasp, GraspSet, GripperTemplate, detect_grasps, pixel_to_robot  # noqa: E402
from src.inference import action_grasp_inference  # noqa: E402
from src.motion_primitives import HelixParams, action_table, get_action, plan_action  # noqa: E402
from src.pipeline import (  # noqa: E402
    evaluate_policies,
    make_trainer,
    run_all,
    stage_calibrate,
    stage_gen_dataset,
)
from src.report import write_report  # noqa: E402
from src.scene_gen import BinBounds, Scene, generate_scene, render_depth  # noqa: E402
from src.settings import DEFAULT_CONFIG, DEFAULT_OUTPUT_DIR, configure_logging, derive_seed  # noqa: E402
from src.sim_eval import OutcomeModel  # noqa: E402

logger = logging.getLogger("harness_picking.cli")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _emit(doc, out: Optional[str]) -> None:
    text = dumps_json(doc)
    if out:
        atomic_write_text(Path(out), text)
        logger.info(f"Wrote {out}")
    else:
        sys.stdout.write(text)


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}", line=e.lineno)


def _calibration(depth: DepthImage, cfg: Optional[PipelineConfig]) -> CameraCalibration:
    bounds = cfg.scene_spec().bin_bounds if cfg is not None else BinBounds()
    return CameraCalibration.centered_on(bounds, depth.mm_per_pixel, HelixParams().c_H)


def _with_robot_frames(grasps: GraspSet, depth: DepthImage, calib: CameraCalibration) -> GraspSet:
    out = []
    for g in grasps:
        try:
            out.append(pixel_to_robot(g, depth, calib))
        except InvalidDepthError as e:
            logger.warning(f"Grasp ({g.u}, {g.v}) kept without robot pose: {e}")
            out.append(g)
    return GraspSet(out)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scenes(args) -> int:
    cfg = _config(args)
    spec = cfg.scene_spec(n_objects=args.n_objects, harness_length=args.length)
    writer = ArtifactWriter(Path(args.out))
    stage_seed = derive_seed(cfg.seed, "gen-scenes")
    for k in range(args.count):
        scene = generate_scene(spec, derive_seed(stage_seed, f"scene:{k}"))
        writer.json(f"scene_{k:04d}.json", scene.to_dict())
    logger.info(f"Generated {args.count} scene(s) with {spec.n_objects} harnesses in {args.out}")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    scene = Scene.from_dict(_read_json(args.scene))
    r = cfg.render
    depth = render_depth(scene, tuple(r.resolution), r.mm_per_pixel, r.dropout,
                         derive_seed(scene.seed, "render"))
    depth.save(args.out)
    logger.info(f"Rendered {args.scene} to {args.out}")
    return 0


def cmd_detect_grasps(args) -> int:
    depth = DepthImage.load(args.depth, mm_per_pixel=args.mm_per_pixel)
    template = GripperTemplate.load(args.template)
    grasps = detect_grasps(depth, template, args.orientations, args.top_k)
    grasps = _with_robot_frames(grasps, depth, _calibration(depth, None))
    _emit(grasps.to_list(), args.out)
    return 0


def cmd_plan(args) -> int:
    action = get_action(args.action)
    grasp = Grasp.from_dict(_read_json(args.grasp))
    trajectory = plan_action(action, grasp, HelixParams())
    _emit(trajectory.to_list(), args.out)
    return 0


def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    if args.total is not None:
        cfg = cfg.model_copy(update={"dataset": cfg.dataset.model_copy(update={"total": args.total})})
    writer = ArtifactWriter(Path(args.out))
    om = stage_calibrate(cfg, writer, derive_seed(cfg.seed, "calibrate"))
    stage_gen_dataset(cfg, om, writer, derive_seed(cfg.seed, "gen-dataset"))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    samples = load_dataset(args.dataset)
    logger.info(f"Training on {len(samples)} samples: {action_counts(samples)}")
    model = make_trainer(cfg)(samples, None, 1.0, derive_seed(cfg.seed, "train"))
    atomic_write_text(Path(args.out), model.to_json())
    logger.info(f"Wrote model to {args.out}")
    return 0


def cmd_active_learn(args) -> int:
    cfg = _config(args)
    seed = derive_seed(cfg.seed, "active-learn")
    al = cfg.active_learning.model_dump()
    if args.ratio is not None:
        al["transfer_ratio"] = args.ratio
    al_cfg = ActiveLearnConfig(seed=seed, **al)
    pool = load_dataset(args.pool)
    init = load_dataset(args.init)
    eval_pool = load_dataset(args.eval) if args.eval else None
    writer = ArtifactWriter(Path(args.out))
    try:
        model, stats = active_learn(pool, init, al_cfg, make_trainer(cfg),
                                    make_inferencer(cfg.inference_config()), eval_pool,
                                    checkpoint_dir=writer.root / "checkpoints")
    except TrainingDivergenceError as e:
        partial = getattr(e, "partial_stats", [])
        writer.csv("stats.csv", STATS_COLUMNS, [st.to_row() for st in partial])
        raise
    writer.csv("stats.csv", STATS_COLUMNS, [st.to_row() for st in stats])
    writer.text("model_final.json", model.to_json())
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    depth = DepthImage.load(args.depth, mm_per_pixel=cfg.render.mm_per_pixel)
    template = GripperTemplate.load(args.template) if args.template else cfg.template()
    grasps = detect_grasps(depth, template, cfg.grasp.n_orientations, args.top_k)
    if len(grasps) == 0:
        raise DataError(f"no grasp candidates in {args.depth}")
    grasps = _with_robot_frames(grasps, depth, _calibration(depth, cfg))
    model = AspModel.load(args.model)
    result = action_grasp_inference(depth, grasps, action_table(), model, cfg.inference_config())
    _emit(result.to_dict(), args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = derive_seed(cfg.seed, "simulate")
    writer = ArtifactWriter(Path(args.out))
    if args.outcome:
        om = OutcomeModel.from_dict(_read_json(args.outcome))
    else:
        om = stage_calibrate(cfg, writer, derive_seed(cfg.seed, "calibrate"))
    models = {}
    if args.model_initial:
        models["initial"] = AspModel.load(args.model_initial)
    if args.model_final:
        models["final"] = AspModel.load(args.model_final)
    evaluate_policies(
        cfg, om, models, writer, seed,
        policies=[args.policy] if args.policy else None,
        tasks=[args.task] if args.task else None,
        episodes=args.episodes,
        harness_length=args.length,
    )
    return 0


def cmd_report(args) -> int:
    write_report(args.metrics, args.out)
    return 0


def cmd_run_all(args) -> int:
    cfg = _config(args)
    run_all(cfg, Path(args.out) if args.out else None, force=args.force)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harness-picking", description="Entangled wire harness picking")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", default=DEFAULT_CONFIG)
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        return p

    p = with_config(sub.add_parser("gen-scenes", help="generate scene JSON files"))
    p.add_argument("--n-objects", type=int, default=None)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--length", type=float, default=None, help="harness length override (m)")
    p.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "scenes"))
    p.set_defaults(func=cmd_gen_scenes)

    p = with_config(sub.add_parser("render", help="render a scene to a 16-bit PGM"))
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("detect-grasps", help="FGE grasp detection on a depth image")
    p.add_argument("--depth", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--orientations", type=int, default=8)
    p.add_argument("--mm-per-pixel", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_detect_grasps)

    p = sub.add_parser("plan", help="trajectory for one action at one grasp")
    p.add_argument("--action", required=True)
    p.add_argument("--grasp", required=True, help="grasp JSON with gx, gy, gz, gphi")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = with_config(sub.add_parser("gen-dataset", help="collect labeled samples"))
    p.add_argument("--total", type=int, default=None)
    p.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "gen"))
    p.set_defaults(func=cmd_gen_dataset)

    p = with_config(sub.add_parser("train", help="train an ASP model"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("active-learn", help="active learning from an initial model"))
    p.add_argument("--pool", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--eval", default=None, help="frozen evaluation pool")
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "active_learning"))
    p.set_defaults(func=cmd_active_learn)

    p = with_config(sub.add_parser("infer", help="action-grasp inference on one image"))
    p.add_argument("--depth", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", default=None)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = with_config(sub.add_parser("simulate", help="closed-loop policy evaluation"))
    p.add_argument("--policy", default=None)
    p.add_argument("--task", default=None, help="consecutive:N or randomized:LO-HI")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--length", type=float, default=None, help="harness length override (m)")
    p.add_argument("--outcome", default=None, help="outcome model JSON; calibrated when absent")
    p.add_argument("--model-initial", default=None)
    p.add_argument("--model-final", default=None)
    p.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "simulate"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summary table and charts from metrics CSVs")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "report"))
    p.set_defaults(func=cmd_report)

    p = with_config(sub.add_parser("run-all", help="run the full pipeline"))
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true", help="ignore the manifest")
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(verbose=args.verbose)
    try:
        return args.func(args)
    except HarnessPickingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
