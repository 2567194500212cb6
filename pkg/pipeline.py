# pipeline.py
from __future__ import annotations

import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np
import pandas as pd
import scipy
import sklearn

from config_utils import flatten
from distillation import NOT_NOVEL, DistillConfig, il_loss, make_distilled_gt
from errors import InputError, OwplError, StageError
from gbd import GbdConfig, GbdResult, UnknownMask, detect_unknown_objects
from hua import HuaConfig, RegionState, grow_region
from losses import LossConfig, closed_set_loss, pseudo_loss, total_oss_loss
from metrics import aupr, auroc, iou_frame, miou, miou_split, pr_curve
from plotter import plot_edge_weight_fit
from pointset import LabelSet, PointProbabilityCloud, load_cloud, save_cloud
from pseudo_labeling import make_pseudo_gt
from store import Store
from synth import SceneSpec, generate_scene
from uncertainty import ScoreField, compute_scores, maxlogit_scores, msp_scores, predict_open_set

logger = logging.getLogger(__name__)

SCENE_FILE = "scene.owpc"
GT_MASK_FILE = "ground_truth_mask.txt"
MEMBERS_FILE = "hua_members.txt"
OBJECTS_FILE = "gbd_objects.txt"
UNKNOWN_MASK_FILE = "unknown_mask.txt"
PSEUDO_FILE = "pseudo_labels.txt"
DISTILLED_FILE = "distilled_gt.csv"


@dataclass
class RunContext:
    cfg: Dict[str, Any]
    store: Store
    workers: int = 1
    timings: bool = True
    report: Dict[str, object] = field(default_factory=dict)

    @contextmanager
    def stage(self, module: str, operation: str) -> Iterator[None]:
        """Times the block and tags any failure with the module and operation."""
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except OwplError as exc:
            if exc.kind in ("config-error", "io-failure"):
                raise
            raise StageError(module, operation, exc) from exc
        except OSError:
            raise
        except Exception as exc:
            raise StageError(module, operation, exc) from exc
        if self.timings:
            self.report[f"timing.{module}.{operation}_seconds"] = round(time.perf_counter() - t0, 6)

    def header(self, command: str) -> Dict[str, object]:
        head: Dict[str, object] = {"command": command}
        for key, value in flatten(self.cfg):
            head[f"config.{key}"] = value
        head["version.python"] = platform.python_version()
        head["version.numpy"] = np.__version__
        head["version.scipy"] = scipy.__version__
        head["version.scikit-learn"] = sklearn.__version__
        head["version.pandas"] = pd.__version__
        return head

    def finish(self, command: str) -> Path:
        report = {**self.header(command), **self.report}
        return self.store.write_report(f"{command}_report.txt", report)


# -----------------------------
# Inputs (re-entrant from files)
# -----------------------------


def load_inputs(ctx: RunContext) -> Tuple[PointProbabilityCloud, Optional[np.ndarray]]:
    """The input cloud and its ground-truth unknown mask (None if unavailable)."""
    run = ctx.cfg["run"]
    if not run["cloud"]:
        return stage_synth(ctx, write=False)
    with ctx.stage("pointset", "load_cloud"):
        cloud = load_cloud(run["cloud"], run["cloud_format"], n_novel=ctx.cfg["distill"]["n_novel"])
    if run["ground_truth"]:
        gt = ctx.store.load_mask(run["ground_truth"])
        if gt.size != cloud.n_points:
            raise StageError("pointset", "load_cloud", InputError("dimension-mismatch", f"{gt.size} mask entries for {cloud.n_points} points"))
    elif cloud.labels is not None:
        # novel classes are outside the C-way head, so they count as unknown
        gt = (cloud.labels == -1) | (cloud.labels >= cloud.n_classes)
    else:
        gt = None
    logger.info("loaded %s: %d points, %d classes", run["cloud"], cloud.n_points, cloud.n_classes)
    return cloud, gt


def get_scores(ctx: RunContext, cloud: PointProbabilityCloud) -> ScoreField:
    path = ctx.cfg["run"]["scores"]
    if path:
        scores = ctx.store.load_scores(path)
        if len(scores) != cloud.n_points:
            raise StageError("uncertainty", "load_scores", InputError("dimension-mismatch", f"{len(scores)} scores for {cloud.n_points} points"))
        return scores
    return stage_score(ctx, cloud, write=False)


def get_region(ctx: RunContext, cloud: PointProbabilityCloud, scores: ScoreField) -> RegionState:
    path = ctx.cfg["run"]["region"]
    if path:
        members = ctx.store.load_indices(path)
        if members.size and (members[0] < 0 or members[-1] >= cloud.n_points):
            raise StageError("hua", "load_region", InputError("index-out-of-range", f"{path}: member outside the cloud"))
        return RegionState(members=members, seeds=np.empty(0, dtype=np.int64))
    return stage_hua(ctx, cloud, scores, write=False)


def get_mask(ctx: RunContext, cloud: PointProbabilityCloud, scores: ScoreField) -> UnknownMask:
    path = ctx.cfg["run"]["objects"]
    if path:
        points, object_ids = ctx.store.load_object_labels(path)
        objects = [np.sort(points[object_ids == o]) for o in np.unique(object_ids[object_ids >= 0])]
        return UnknownMask(objects=objects, rejected=np.sort(points[object_ids < 0]))
    region = get_region(ctx, cloud, scores)
    return stage_gbd(ctx, cloud, scores, region, write=False).mask


# -----------------------------
# Stages
# -----------------------------


def stage_synth(ctx: RunContext, write: bool = True) -> Tuple[PointProbabilityCloud, np.ndarray]:
    with ctx.stage("synth", "generate_scene"):
        spec = SceneSpec.from_config(ctx.cfg["synth"])
        cloud, gt = generate_scene(spec)
    ctx.report["synth.points"] = cloud.n_points
    ctx.report["synth.unknown_points"] = int(gt.sum())
    if write:
        with ctx.stage("pointset", "save_cloud"):
            ctx.store.root.mkdir(parents=True, exist_ok=True)
            save_cloud(cloud, ctx.store.path(SCENE_FILE))
        ctx.store.write_mask(GT_MASK_FILE, gt)
    return cloud, gt


def stage_score(
    ctx: RunContext, cloud: PointProbabilityCloud, method: Optional[str] = None, write: bool = True
) -> ScoreField:
    method = method or ctx.cfg["score"]["method"]
    with ctx.stage("uncertainty", f"{method}_scores"):
        scores = compute_scores(cloud.logits, method)
    with ctx.stage("uncertainty", "predict_open_set"):
        predicted = predict_open_set(cloud.logits, scores.as_unknown_scores(), ctx.cfg["predict"]["lambda"])
    ctx.report["score.method"] = scores.method.value
    ctx.report["score.mean"] = float(scores.scores.mean())
    ctx.report["score.min"] = float(scores.scores.min())
    ctx.report["score.max"] = float(scores.scores.max())
    ctx.report["score.predicted_unknown"] = int((predicted == cloud.n_classes).sum())
    if write:
        ctx.store.write_scores(f"scores_{scores.method.value}.txt", scores)
        ctx.store.write_labels(f"predictions_{scores.method.value}.txt", predicted)
    return scores


def stage_hua(ctx: RunContext, cloud: PointProbabilityCloud, scores: ScoreField, write: bool = True) -> RegionState:
    with ctx.stage("hua", "grow_region"):
        config = HuaConfig.from_config(ctx.cfg["hua"])
        region = grow_region(cloud, scores, config, workers=ctx.workers)
    ctx.report["hua.members"] = region.size
    ctx.report["hua.iterations"] = region.iteration
    ctx.report["hua.stopped_reason"] = region.stopped_reason.value
    ctx.report["hua.stop_threshold"] = region.stop_threshold
    ctx.report["hua.seed_mean"] = region.seed_mean
    ctx.report["hua.mean_score_history"] = region.mean_score_history
    ctx.report["hua.batch_sizes"] = region.batch_sizes
    if write:
        ctx.store.write_indices(MEMBERS_FILE, region.members)
    return region


def stage_gbd(
    ctx: RunContext,
    cloud: PointProbabilityCloud,
    scores: ScoreField,
    region: RegionState,
    write: bool = True,
) -> GbdResult:
    with ctx.stage("gbd", "detect_unknown_objects"):
        config = GbdConfig.from_config(ctx.cfg["gbd"], ctx.cfg["hua"]["sim_d_mode"])
        result = detect_unknown_objects(cloud, region, scores, config, workers=ctx.workers)
    mask = result.mask
    ctx.report["gbd.enabled"] = config.enabled
    if result.fit is not None:
        ctx.report["gbd.mu"] = result.fit.means
        ctx.report["gbd.sigma"] = result.fit.stddevs
        ctx.report["gbd.pi"] = result.fit.weights
        ctx.report["gbd.log_likelihood"] = result.fit.log_likelihood
        ctx.report["gbd.em_iterations"] = result.fit.iterations
        ctx.report["gbd.em_converged"] = result.fit.converged
    ctx.report["gbd.fallback"] = result.fallback
    ctx.report["gbd.threshold"] = result.threshold
    if result.tree is not None:
        ctx.report["gbd.tree_edges"] = result.tree.n_edges
    ctx.report["gbd.objects"] = len(mask.objects)
    ctx.report["gbd.object_sizes"] = [int(o.size) for o in mask.objects]
    ctx.report["gbd.rejected"] = int(mask.rejected.size)

    if write:
        ctx.store.write_object_labels(OBJECTS_FILE, region.members, mask.object_labels(region.members))
        flags = np.zeros(cloud.n_points, dtype=bool)
        flags[mask.unknown_points()] = True
        ctx.store.write_mask(UNKNOWN_MASK_FILE, flags)
        if ctx.cfg["gbd"]["plot"] and result.tree is not None:
            with ctx.stage("plotter", "plot_edge_weight_fit"):
                plot_edge_weight_fit(result.tree.w, result.fit, result.threshold, str(ctx.store.path("gbd_edge_weights.png")))
    return result


def _closed_labels(cloud: PointProbabilityCloud) -> np.ndarray:
    if cloud.labels is not None:
        return np.where(cloud.labels < cloud.n_classes, cloud.labels, -1)
    # without annotations the closed-set prediction stands in for Y_C
    return np.argmax(cloud.logits, axis=1)


def stage_pseudo(ctx: RunContext, cloud: PointProbabilityCloud, mask: UnknownMask, write: bool = True) -> LabelSet:
    c = cloud.n_classes
    closed = _closed_labels(cloud)
    with ctx.stage("pseudo_labeling", "make_pseudo_gt"):
        pseudo = make_pseudo_gt(closed, mask, c)
    ctx.report["pseudo.unknown_points"] = int((pseudo.hard == c).sum())

    with ctx.stage("losses", "total_oss_loss"):
        u_scores = 1.0 - msp_scores(cloud.logits).scores
        known = closed >= 0
        closed_loss = closed_set_loss(cloud.logits[known], closed[known])[0] if known.any() else 0.0
        labelled = pseudo.hard >= 0
        p_loss = pseudo_loss(cloud.logits[labelled], u_scores[labelled], pseudo.hard[labelled])[0] if labelled.any() else 0.0
        total = total_oss_loss(closed_loss, p_loss, LossConfig(ctx.cfg["loss"]["alpha"]))
    ctx.report["loss.closed_set"] = closed_loss
    ctx.report["loss.pseudo"] = p_loss
    ctx.report["loss.total_oss"] = total
    if write:
        ctx.store.write_labels(PSEUDO_FILE, pseudo.hard)
    return pseudo


def stage_distill(
    ctx: RunContext, cloud: PointProbabilityCloud, gt_unknown: Optional[np.ndarray], write: bool = True
) -> LabelSet:
    dcfg = ctx.cfg["distill"]
    n_novel = dcfg["n_novel"]
    with ctx.stage("distillation", "make_distilled_gt"):
        if dcfg["novel_labels"]:
            # the cloud already carries the extended head: C known + n_novel columns
            teacher = cloud.logits
            novel = ctx.store.load_labels(dcfg["novel_labels"])
        elif cloud.labels is not None and np.any(cloud.labels >= cloud.n_classes):
            teacher = np.hstack([cloud.logits, np.zeros((cloud.n_points, n_novel))])
            novel = np.where(cloud.labels >= cloud.n_classes, cloud.labels, NOT_NOVEL)
        else:
            if gt_unknown is None:
                raise InputError("invalid-spec", "distill needs distill.novel_labels or a ground-truth unknown mask")
            teacher = np.hstack([cloud.logits, np.zeros((cloud.n_points, n_novel))])
            novel = np.where(gt_unknown, cloud.n_classes, NOT_NOVEL)
        config = DistillConfig(dcfg["temperature"], n_novel, teacher.shape[1] - n_novel)
        distilled = make_distilled_gt(teacher, novel, config)
    with ctx.stage("distillation", "il_loss"):
        loss, _ = il_loss(teacher, distilled, config.temperature)
    ctx.report["distill.novel_points"] = int((novel != NOT_NOVEL).sum())
    ctx.report["distill.width"] = config.width
    ctx.report["distill.il_loss_teacher"] = loss
    if write:
        ctx.store.write_soft_labels(DISTILLED_FILE, distilled.soft)
    return distilled


def stage_eval(
    ctx: RunContext, cloud: PointProbabilityCloud, mask: UnknownMask, gt_unknown: Optional[np.ndarray]
) -> Dict[str, object]:
    if gt_unknown is None:
        raise StageError("metrics", "auroc", InputError("invalid-spec", "eval needs run.ground_truth or labelled cloud"))
    ecfg = ctx.cfg["eval"]
    c = cloud.n_classes
    predicted_mask = np.zeros(cloud.n_points, dtype=bool)
    predicted_mask[mask.unknown_points()] = True
    out: Dict[str, object] = {}

    with ctx.stage("metrics", "auroc"):
        msp_unknown = msp_scores(cloud.logits).as_unknown_scores().scores
        ml_unknown = maxlogit_scores(cloud.logits).as_unknown_scores().scores
        out["eval.msp_auroc"] = auroc(msp_unknown, gt_unknown)
        out["eval.maxlogit_auroc"] = auroc(ml_unknown, gt_unknown)
        out["eval.mask_auroc"] = auroc(predicted_mask.astype(float), gt_unknown)
    with ctx.stage("metrics", "aupr"):
        out["eval.msp_aupr"] = aupr(msp_unknown, gt_unknown)
        out["eval.maxlogit_aupr"] = aupr(ml_unknown, gt_unknown)
        out["eval.mask_aupr"] = aupr(predicted_mask.astype(float), gt_unknown)
    inter = int((predicted_mask & gt_unknown).sum())
    union = int((predicted_mask | gt_unknown).sum())
    out["eval.pseudo_iou"] = inter / union if union else 0.0

    with ctx.stage("metrics", "miou"):
        pred = predict_open_set(cloud.logits, msp_scores(cloud.logits).as_unknown_scores(), ctx.cfg["predict"]["lambda"])
        if cloud.labels is not None:
            gt_sem = np.where(gt_unknown | (cloud.labels >= c), c, cloud.labels)
        else:
            gt_sem = np.where(gt_unknown, c, np.argmax(cloud.logits, axis=1))
        per_class, m_known = miou(pred, gt_sem, range(c))
        unknown_iou = miou(pred, gt_sem, [c])[0].get(c, float("nan"))
    out["eval.miou_known"] = m_known
    out["eval.unknown_iou"] = unknown_iou
    if ecfg["old_classes"] and ecfg["novel_classes"]:
        with ctx.stage("metrics", "miou_split"):
            m_all, m_old, m_novel = miou_split(pred, gt_sem, ecfg["old_classes"], ecfg["novel_classes"])
        out["eval.miou_all"] = m_all
        out["eval.miou_old"] = m_old
        out["eval.miou_novel"] = m_novel

    ctx.report.update(out)
    if ecfg["write_curves"]:
        per_class[c] = unknown_iou
        ctx.store.write_frame("per_class_iou.csv", iou_frame(per_class))
        ctx.store.write_frame("pr_curve_msp.csv", pr_curve(msp_unknown, gt_unknown))
        ctx.store.write_frame("pr_curve_mask.csv", pr_curve(predicted_mask.astype(float), gt_unknown))
    return out


# -----------------------------
# Subcommands
# -----------------------------


def run_command(ctx: RunContext, command: str, method: Optional[str] = None) -> Path:
    if command == "synth":
        stage_synth(ctx)
        return ctx.finish(command)

    cloud, gt = load_inputs(ctx)
    if command == "score":
        stage_score(ctx, cloud, method=method)
    elif command == "hua":
        stage_hua(ctx, cloud, get_scores(ctx, cloud))
    elif command == "gbd":
        scores = get_scores(ctx, cloud)
        stage_gbd(ctx, cloud, scores, get_region(ctx, cloud, scores))
    elif command == "pseudo":
        scores = get_scores(ctx, cloud)
        stage_pseudo(ctx, cloud, get_mask(ctx, cloud, scores))
    elif command == "distill":
        stage_distill(ctx, cloud, gt)
    elif command == "eval":
        scores = get_scores(ctx, cloud)
        stage_eval(ctx, cloud, get_mask(ctx, cloud, scores), gt)
    elif command == "pipeline":
        run_pipeline(ctx, cloud, gt)
    else:
        raise ValueError(f"unknown command {command!r}")
    return ctx.finish(command)


def run_pipeline(ctx: RunContext, cloud: PointProbabilityCloud, gt: Optional[np.ndarray]) -> None:
    if not ctx.cfg["run"]["cloud"]:
        ctx.store.root.mkdir(parents=True, exist_ok=True)
        with ctx.stage("pointset", "save_cloud"):
            save_cloud(cloud, ctx.store.path(SCENE_FILE))
        ctx.store.write_mask(GT_MASK_FILE, gt)
    scores = get_scores(ctx, cloud)
    if not ctx.cfg["run"]["scores"]:
        ctx.store.write_scores(f"scores_{scores.method.value}.txt", scores)
    region = stage_hua(ctx, cloud, scores)
    result = stage_gbd(ctx, cloud, scores, region)
    stage_pseudo(ctx, cloud, result.mask)
    if ctx.cfg["run"]["distill"]:
        stage_distill(ctx, cloud, gt)
    if ctx.cfg["run"]["eval"] and gt is not None:
        stage_eval(ctx, cloud, result.mask, gt)
