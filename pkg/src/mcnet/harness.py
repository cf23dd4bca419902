"""Training, evaluation, ablation and K-sweep drivers plus checkpoint I/O."""

import base64
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .metrics import ConfusionMatrix, metrics_report
from .model import Ablation, ModelConfig, build_model
from .pointcloud import SceneSpec, class_frequencies, synth_scene
from .sampler import ClassWeights, class_weights_from_frequencies, default_sigma, draw_patch
from .spatial import knn_grid
from .voting import VoteInputs, argmax_baseline, vote

log = logging.getLogger(__name__)

# SensatUrban reference numbers for the full-scale network. They come from
# city-scale GPU training and are kept as metadata only; nothing here
# attempts to reproduce them.
REFERENCE_ABLATION_MIOU = {"A": 61.18, "B": 56.93, "C": 63.48, "D": 62.45, "E": 64.50}
REFERENCE_KSWEEP = {9: (93.92, 64.43), 16: (93.83, 64.12), 25: (94.00, 64.50), 36: (93.87, 64.33)}

ABLATION_ROWS = {
    "A": {"sws": False},
    "B": {"mcae": False},
    "C": {"pcsp": False},
    "D": {"nv": False},
    "E": {},
}


def weighted_cross_entropy(logits, truth, weights):
    """Mean over points of ``w[truth_i] * -log softmax(logits_i)[truth_i]``."""
    truth = np.asarray(truth, dtype=np.int64)
    n, c = logits.shape
    if truth.shape != (n,):
        raise ContractError(f"{truth.shape[0] if truth.ndim else 0} labels for {n} logit rows")
    if truth.size and (truth.min() < 0 or truth.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    w = weights.weights if isinstance(weights, ClassWeights) else np.asarray(weights, float)
    if w.shape[0] < c:
        raise ContractError(f"{w.shape[0]} class weights for {c} classes")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    nll = log_norm - shifted[rows, truth]
    wi = w[truth]
    value = np.array((wi * nll).sum() / n)

    def _bw(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, truth] -= 1.0
        T._accumulate(logits, float(g) * probs * (wi / n)[:, None])

    return T._result(value, (logits,), _bw)


@dataclass
class RunReport:
    config_hash: str
    losses: list
    metrics: dict | None = None
    wall_clock_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_timing=False):
        doc = {"config_hash": self.config_hash, "losses": self.losses, "metrics": self.metrics}
        doc.update(self.extra)
        if include_timing:
            doc["wall_clock_seconds"] = self.wall_clock_seconds
        return doc


def _class_weights(cloud, config):
    if config.ablation.sws:
        return class_weights_from_frequencies(class_frequencies(cloud))
    return ClassWeights.uniform(cloud.num_classes)


def _train_rng(config):
    return np.random.default_rng(np.random.SeedSequence([config.seed, 1]))


def train(model, cloud, config=None, progress=None):
    """Minimize weighted cross-entropy with plain SGD over drawn patches.

    One epoch is ``steps_per_epoch`` optimizer steps, each averaging the loss
    of ``batch_size`` patches. With ``ablation.sws`` the patches and the loss
    use inverse-sqrt-frequency class weights; otherwise both are unweighted.
    """
    config = config or model.config
    if cloud.labels is None:
        raise ContractError("training needs a labelled cloud")
    start = time.perf_counter()
    rng = _train_rng(config)
    weights = _class_weights(cloud, config)
    patch_size = min(config.patch_size, len(cloud))
    sigma = config.sigma or default_sigma(cloud, patch_size)
    params = model.parameters()
    losses = []
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for _ in range(config.steps_per_epoch):
            batch = []
            for _ in range(config.batch_size):
                ids = np.sort(draw_patch(cloud, weights, patch_size, sigma, rng).point_ids)
                levels = model.pyramid(cloud.positions[ids], cloud.colors[ids], rng)
                logits_point, logits_nei = model.forward(levels, training=True)
                truth = cloud.labels[ids]
                loss = weighted_cross_entropy(logits_point, truth, weights)
                if config.ablation.nv:
                    loss = T.add(loss, weighted_cross_entropy(logits_nei, truth, weights))
                batch.append(loss)
            loss = T.stack_scalars(batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}")
            T.backward(loss)
            if config.learning_rate > 0:
                try:
                    T.sgd_step(params, config.learning_rate)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}: {exc}") from None
            epoch_loss += value
        losses.append(epoch_loss / config.steps_per_epoch)
        if progress is not None:
            progress(epoch, losses[-1])
    return RunReport(config.digest(), losses, wall_clock_seconds=time.perf_counter() - start)


def tile_patches(cloud, patch_size, overlap=0.25):
    """Deterministic patches (lists of point ids) covering every point at least once.

    Patch centers sit on a regular grid whose spacing is the patch diameter
    shrunk by ``overlap``; each patch is the ``patch_size`` points nearest its
    center. Any point still uncovered then seeds a patch of its own.
    """
    n = len(cloud)
    patch_size = min(patch_size, n)
    if patch_size == n:
        return [np.arange(n)]
    pos = cloud.positions
    spacing = max(2.0 * default_sigma(cloud, patch_size) * (1.0 - overlap), 1e-12)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    axes = [np.arange(lo[d] + spacing / 2, hi[d] + spacing / 2, spacing) for d in range(3)]
    axes = [a if a.size else np.array([lo[d]]) for d, a in enumerate(axes)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # Drop grid centers with no point in their own cell.
    near = knn_grid(centers, pos, 1).distances[:, 0]
    centers = centers[near <= spacing * np.sqrt(3) / 2]
    covered = np.zeros(n, dtype=bool)
    patches = []
    if len(centers):
        for ids in knn_grid(centers, pos, patch_size).indices:
            if not covered[ids].all():
                patches.append(np.sort(ids))
                covered[ids] = True
    while not covered.all():
        seed = int(np.flatnonzero(~covered)[0])
        ids = np.sort(knn_grid(pos[seed:seed + 1], pos, patch_size).indices[0])
        patches.append(ids)
        covered[ids] = True
    return patches


def predict(model, cloud, config=None, return_coverage=False):
    """Per-point labels from tiled inference; later patches overwrite earlier ones."""
    config = config or model.config
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    pred = np.full(len(cloud), -1, dtype=np.int64)
    coverage = np.zeros(len(cloud), dtype=np.int64)
    with T.no_grad():
        for ids in tile_patches(cloud, config.patch_size, config.eval_overlap):
            levels = model.pyramid(cloud.positions[ids], cloud.colors[ids], rng)
            logits_point, logits_nei = model.forward(levels, training=False)
            if config.ablation.nv:
                labels = vote(
                    VoteInputs(logits_point.data, logits_nei.data, levels[0].neighbors),
                    config.vote_match_mode,
                ).final_labels
            else:
                labels = argmax_baseline(logits_point.data)
            pred[ids] = labels
            coverage[ids] += 1
    if return_coverage:
        return pred, coverage
    return pred


def evaluate(model, cloud, config=None, class_names=None):
    """OA / mIoU report of tiled inference against the cloud's labels."""
    if cloud.labels is None:
        raise ContractError("evaluation needs a labelled cloud")
    config = config or model.config
    pred = predict(model, cloud, config)
    cm = ConfusionMatrix(config.num_classes).accumulate(cloud.labels, pred)
    return metrics_report(cm, class_names)


def train_and_evaluate(cloud, config, eval_cloud=None):
    model = build_model(config)
    report = train(model, cloud, config)
    start = time.perf_counter()
    report.metrics = evaluate(model, eval_cloud or cloud, config)
    report.wall_clock_seconds += time.perf_counter() - start
    return model, report


def ablate(cloud, base_config, eval_cloud=None):
    """Train and evaluate the five toggle configurations A-E with a shared seed."""
    rows = []
    for row, toggles in ABLATION_ROWS.items():
        ablation = Ablation(**{**Ablation().__dict__, **toggles})
        config = base_config.replace(ablation=ablation)
        _, report = train_and_evaluate(cloud, config, eval_cloud)
        rows.append({
            "model": row,
            "ablation": ablation.__dict__.copy(),
            "oa": report.metrics["oa"],
            "miou": report.metrics["miou"],
            "nan_free": bool(np.all(np.isfinite(report.losses))),
            "report": report,
        })
        log.info("ablation %s: mIoU %.4f", row, report.metrics["miou"])
    return rows


def ksweep(cloud, base_config, ks=(9, 16, 25, 36), eval_cloud=None):
    """Train and evaluate one model per neighborhood size."""
    if not ks or any(int(k) < 1 for k in ks):
        raise ContractError(f"invalid K list {list(ks)}")
    rows = []
    for k in ks:
        config = base_config.replace(k_neighbors=int(k))
        _, report = train_and_evaluate(cloud, config, eval_cloud)
        rows.append({"k": int(k), "oa": report.metrics["oa"], "miou": report.metrics["miou"],
                     "report": report})
    return rows


def table_to_json(rows, reference=None):
    doc = {"rows": [{k: (v.to_dict() if isinstance(v, RunReport) else v) for k, v in r.items()}
                    for r in rows]}
    if reference is not None:
        doc["reference"] = reference
    return doc


# ---------------------------------------------------------------- checkpoints


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(entry):
    data = entry["data"]
    if isinstance(data, str):
        arr = np.frombuffer(base64.b64decode(data), dtype="<f8")
    else:
        arr = np.asarray(data, dtype=np.float64)
    return arr.reshape(entry["shape"]).astype(np.float64)


def checkpoint_dict(model):
    return {
        "config": model.config.to_dict(),
        "parameters": {name: _encode(arr) for name, arr in model.state_dict().items()},
        "rng_seed": model.config.seed,
    }


def save_checkpoint(model, path):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    config = ModelConfig.from_dict(doc["config"])
    model = build_model(config)
    model.load_state_dict({name: _decode(e) for name, e in doc["parameters"].items()})
    return model


# ------------------------------------------------------------ benchmark scenes


def benchmark_scene_spec(seed=0, points=4096):
    """Balanced 3-class scene: ground plane, building box, pole cylinder."""
    third = points // 3
    return SceneSpec(seed=seed, classes=[
        {"name": "ground", "point_count": points - 2 * third, "geometry": "plane",
         "color_mean": (0.45, 0.40, 0.30), "color_jitter": 0.05, "noise_sigma": 0.02,
         "center": (0.0, 0.0, 0.0), "size": (8.0, 8.0, 0.0)},
        {"name": "building", "point_count": third, "geometry": "box",
         "color_mean": (0.70, 0.70, 0.75), "color_jitter": 0.05, "noise_sigma": 0.02,
         "center": (-1.5, 0.0, 1.5), "size": (3.0, 3.0, 3.0)},
        {"name": "vegetation", "point_count": third, "geometry": "scatter",
         "color_mean": (0.20, 0.60, 0.20), "color_jitter": 0.05, "noise_sigma": 0.0,
         "center": (2.0, 1.0, 1.2), "size": (0.6, 0.6, 0.6)},
    ])


def imbalanced_scene_spec(seed=0, points=2048):
    """Scene with a dominant ground class and a rare, color-ambiguous class."""
    rare = max(points // 50, 8)
    mid = points // 5
    return SceneSpec(seed=seed, classes=[
        {"name": "ground", "point_count": points - mid - rare, "geometry": "plane",
         "color_mean": (0.45, 0.42, 0.35), "color_jitter": 0.08, "noise_sigma": 0.03,
         "center": (0.0, 0.0, 0.0), "size": (8.0, 8.0, 0.0)},
        {"name": "building", "point_count": mid, "geometry": "box",
         "color_mean": (0.65, 0.65, 0.70), "color_jitter": 0.08, "noise_sigma": 0.03,
         "center": (-2.0, -1.0, 1.0), "size": (2.5, 2.5, 2.0)},
        {"name": "pole", "point_count": rare, "geometry": "cylinder",
         "color_mean": (0.55, 0.52, 0.48), "color_jitter": 0.08, "noise_sigma": 0.01,
         "center": (2.0, 2.0, 1.5), "size": (0.3, 0.3, 3.0)},
    ])


def benchmark_scene(seed=0, points=4096):
    return synth_scene(benchmark_scene_spec(seed, points))
