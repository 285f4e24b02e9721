"""Synthetic RGB-D scenes, a tiny trainable network, and benchmarks.

The scenes are axis-aligned planes (corridor walls, floor, back wall)
with analytically exact depth.  Surface textures are sinusoid stripes
painted in world coordinates plus iid noise; every surface draws from
the same distribution family (same amplitude, same noise, random phase),
and the class identity is carried only by the stripe period along the
surface, in meters.  Under projection the apparent period mixes with
depth, so a fixed 2D sampling grid sees overlapping appearance across
classes; sampling that follows the 3D plane separates them.  That makes
the label recoverable through geometry rather than photometry alone.

The toy model is two layers: a 3x3 convolution (standard grid or
depth-adapted), a ReLU, and a 1x1 convolution into per-pixel class
logits trained with softmax cross-entropy and plain full-batch gradient
descent.  Both operator choices run through the adapted kernels (the
standard one with an all-zero offset field, which is exactly the
standard convolution), so parameter counts match by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .geometry import CameraIntrinsics, KernelSpec, compute_offsets
from .ops import (
    ConvWeights,
    conv_param_count,
    standard_avg_pool,
    standard_conv,
    za_avg_pool,
    za_conv_backward,
    za_conv_forward,
)
from .tensor import DepthMap, FeatureTensor, OffsetField

__all__ = [
    "SyntheticScene",
    "TrainConfig",
    "TrainResult",
    "BenchRow",
    "generate_scene",
    "scene_plane_residuals",
    "train_toy",
    "evaluate",
    "segmentation_metrics",
    "paired_toy_runs",
    "bench",
]

SCENE_KINDS = ("ramp", "corridor", "frontoparallel")

# Corridor layout: the back wall occupies the central band of the image,
# side walls recede toward it.  Stripe frequencies are set in units of
# cycles per dilated sampling step: the back wall's fixed frequency lies
# inside the band the left wall sweeps over its depth range, so a fixed
# 2D grid cannot tell them apart by frequency alone, while the right
# wall's band stays disjoint.  Sampling grids that follow the receding
# walls collapse sideways onto near-duplicate positions (correlated
# noise), which separates walls from the fronto-parallel back wall.
_BACK_DELTA = 0.30
_LEFT_DELTA = 0.45
_RIGHT_DELTA = 0.12
_NOISE_SIGMA = 0.1
_BACK_FRACTION = 0.2  # halfwidth of the back wall as a fraction of image width


@dataclass(frozen=True)
class SyntheticScene:
    """A rendered planar scene with exact depth and per-pixel labels."""

    depth: DepthMap
    features: FeatureTensor
    labels: np.ndarray = field(repr=False)
    intrinsics: CameraIntrinsics
    description: dict

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.depth.height, self.depth.width):
            raise ConfigError("label grid does not match depth dimensions")
        labels = np.ascontiguousarray(labels)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the toy experiment; fully seeded."""

    learning_rate: float = 0.5
    epochs: int = 120
    seed: int = 0
    operator: str = "adapted"  # "standard" | "adapted"
    hidden: int = 24
    kernel: int = 3
    dilation: int = 1
    assumed_focal: float | None = None  # override scene intrinsics for offsets

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.operator not in ("standard", "adapted"):
            raise ConfigError(f"operator must be 'standard' or 'adapted', got {self.operator!r}")


@dataclass(frozen=True)
class TrainResult:
    weights: tuple[ConvWeights, ConvWeights]
    losses: list[float]
    miou: float
    pixel_acc: float
    param_count: int


@dataclass(frozen=True)
class BenchRow:
    op: str
    size: int
    param_count: int
    repeats: int
    median_ms: float
    p95_ms: float | None

    def as_dict(self) -> dict:
        return {
            "op": self.op,
            "size": self.size,
            "param_count": self.param_count,
            "repeats": self.repeats,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
        }


def _pixel_grid(h: int, w: int):
    v = np.arange(h, dtype=np.float64)[:, None]
    u = np.arange(w, dtype=np.float64)[None, :]
    return u, v


def generate_scene(kind: str, h: int, w: int, seed: int, focal: float = 519.0) -> SyntheticScene:
    """Render a planar scene with exact depth, stripes, and labels.

    ``corridor``: left/right walls receding to a fronto-parallel back
    wall (3 classes, depths symmetric about the vertical centerline).
    ``ramp``: a floor receding to a back wall (2 classes).
    ``frontoparallel``: one constant-depth plane (1 class).
    """
    if kind not in SCENE_KINDS:
        raise ConfigError(f"unknown scene kind {kind!r}, expected one of {SCENE_KINDS}")
    if h < 16 or w < 16:
        raise ConfigError(f"scene dims must be >= 16, got {h}x{w}")
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(fu=focal, fv=focal, cu=(w - 1) / 2, cv=(h - 1) / 2)
    u, v = _pixel_grid(h, w)
    zb = 4.0

    if kind == "frontoparallel":
        z0 = 2.5
        depth = np.full((h, w), z0)
        labels = np.zeros((h, w), dtype=np.int64)
        period = z0 / (focal * _BACK_DELTA)
        planes = [{"label": 0, "name": "plane", "normal": (0.0, 0.0, 1.0), "offset": z0,
                   "period": period, "axis": (0.0, 1.0, 0.0)}]
    elif kind == "corridor":
        half = _BACK_FRACTION * w * zb / focal  # corridor halfwidth in meters
        du = u - K.cu
        with np.errstate(divide="ignore"):
            z_wall = np.where(np.abs(du) > 0, half * focal / np.abs(du), np.inf)
        z_wall = np.broadcast_to(z_wall, (h, w))
        depth = np.minimum(zb, z_wall)
        labels = np.where(z_wall <= zb, np.where(du < 0, 1, 2), 0).astype(np.int64)
        planes = [
            {"label": 0, "name": "back", "normal": (0.0, 0.0, 1.0), "offset": zb,
             "period": zb / (focal * _BACK_DELTA), "axis": (0.0, 1.0, 0.0)},
            {"label": 1, "name": "left", "normal": (1.0, 0.0, 0.0), "offset": -half,
             "period": zb / (focal * _LEFT_DELTA), "axis": (0.0, 1.0, 0.0)},
            {"label": 2, "name": "right", "normal": (1.0, 0.0, 0.0), "offset": half,
             "period": zb / (focal * _RIGHT_DELTA), "axis": (0.0, 1.0, 0.0)},
        ]
    else:  # ramp
        drop = 0.35 * h * zb / focal  # floor height below the optical axis
        dv = v - K.cv
        with np.errstate(divide="ignore"):
            z_floor = np.where(dv > 0, drop * focal / np.maximum(dv, 1e-12), np.inf)
        z_floor = np.broadcast_to(z_floor, (h, w))
        depth = np.minimum(zb, z_floor)
        labels = np.where(z_floor <= zb, 1, 0).astype(np.int64)
        planes = [
            {"label": 0, "name": "back", "normal": (0.0, 0.0, 1.0), "offset": zb,
             "period": zb / (focal * _BACK_DELTA), "axis": (1.0, 0.0, 0.0)},
            {"label": 1, "name": "floor", "normal": (0.0, 1.0, 0.0), "offset": drop,
             "period": zb / (focal * _LEFT_DELTA), "axis": (1.0, 0.0, 0.0)},
        ]

    # True back-projection of every pixel (the scene generator knows the
    # real intrinsics; the offset generator may later assume other ones).
    points = np.stack(
        [(u - K.cu) * depth / K.fu, (v - K.cv) * depth / K.fv, depth], axis=-1
    )

    period_map = np.zeros((h, w))
    phase_map = np.zeros((h, w))
    axis_map = np.zeros((h, w, 3))
    for plane in planes:
        mask = labels == plane["label"]
        phase = float(rng.uniform(0.0, 1.0))
        plane["phase"] = phase
        period_map[mask] = plane["period"]
        phase_map[mask] = phase
        axis_map[mask] = plane["axis"]

    coord = np.einsum("hwk,hwk->hw", points, axis_map)
    t = 2.0 * np.pi * (coord / period_map + phase_map)
    feats = np.stack(
        [
            np.sin(t) + _NOISE_SIGMA * rng.standard_normal((h, w)),
            np.cos(t) + _NOISE_SIGMA * rng.standard_normal((h, w)),
            rng.standard_normal((h, w)),
        ]
    ).astype(np.float32)

    description = {
        "kind": kind,
        "seed": seed,
        "focal": focal,
        "noise_sigma": _NOISE_SIGMA,
        "planes": planes,
    }
    return SyntheticScene(
        depth=DepthMap(depth.astype(np.float32)),
        features=FeatureTensor(feats),
        labels=labels,
        intrinsics=K,
        description=description,
    )


def scene_plane_residuals(scene: SyntheticScene) -> np.ndarray:
    """Per-pixel distance (meters) from the back-projection to the labeled plane."""
    h, w = scene.depth.height, scene.depth.width
    u, v = _pixel_grid(h, w)
    K = scene.intrinsics
    z = scene.depth.data.astype(np.float64)
    pts = np.stack([(u - K.cu) * z / K.fu, (v - K.cv) * z / K.fv, z], axis=-1)
    res = np.full((h, w), np.nan)
    for plane in scene.description["planes"]:
        n = np.asarray(plane["normal"], dtype=np.float64)  # unit by construction
        mask = scene.labels == plane["label"]
        res[mask] = np.abs(pts[mask] @ n - plane["offset"])
    return res


def segmentation_metrics(pred: np.ndarray, labels: np.ndarray, num_classes: int):
    """(mIoU, pixel accuracy) over an integer label grid.

    mIoU averages intersection-over-union across the classes that appear
    in either the prediction or the reference.
    """
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    pixel_acc = float(np.mean(pred == labels))
    ious = []
    for k in range(num_classes):
        inter = np.count_nonzero((pred == k) & (labels == k))
        union = np.count_nonzero((pred == k) | (labels == k))
        if union > 0:
            ious.append(inter / union)
    miou = float(np.mean(ious)) if ious else 0.0
    return miou, pixel_acc


def _scene_offsets(scene: SyntheticScene, cfg: TrainConfig, spec: KernelSpec) -> OffsetField:
    h, w = scene.depth.height, scene.depth.width
    if cfg.operator == "standard":
        return OffsetField.zeros(spec.size, h, w)
    K = scene.intrinsics
    if cfg.assumed_focal is not None:
        K = CameraIntrinsics(cfg.assumed_focal, cfg.assumed_focal, K.cu, K.cv)
    field, _ = compute_offsets(scene.depth, K, spec, h, w)
    return field


def _softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=0, keepdims=True)
    npix = labels.size
    onehot = np.zeros_like(p)
    ks = np.arange(p.shape[0])[:, None, None]
    onehot[:] = (ks == labels[None]).astype(np.float64)
    eps = 1e-12
    loss = float(-(onehot * np.log(p + eps)).sum() / npix)
    grad = ((p - onehot) / npix).astype(np.float32)
    return loss, grad


def _forward(x, w1, w2, offsets, spec):
    pre, _ = za_conv_forward(x, w1, offsets, spec)
    hidden = FeatureTensor(np.maximum(pre.data, 0.0))
    logits, _ = za_conv_forward(hidden, w2, OffsetField.zeros(1, pre.height, pre.width), KernelSpec(1))
    return pre, hidden, logits


def train_toy(scenes, cfg: TrainConfig, eval_scenes=None) -> TrainResult:
    """Train the two-layer toy segmenter with full-batch gradient descent.

    Metrics come from ``eval_scenes`` when given (held-out evaluation),
    else from the training scenes.  Runs are bit-reproducible for a
    fixed config.  Raises :class:`TrainingError` naming the epoch if the
    loss, an activation, or a weight goes non-finite.
    """
    scenes = list(scenes)
    if not scenes:
        raise ConfigError("need at least one training scene")
    num_classes = max(s.num_classes for s in scenes)
    c_in = scenes[0].features.channels
    spec = KernelSpec.same(cfg.kernel, dilation=cfg.dilation)
    rng = np.random.default_rng(cfg.seed)

    w1 = ConvWeights(
        (rng.standard_normal((cfg.hidden, c_in, cfg.kernel, cfg.kernel))
         * np.sqrt(2.0 / (c_in * cfg.kernel * cfg.kernel))).astype(np.float32)
    )
    w2 = ConvWeights(
        (rng.standard_normal((num_classes, cfg.hidden, 1, 1))
         * np.sqrt(2.0 / cfg.hidden)).astype(np.float32)
    )

    prepared = [(s, _scene_offsets(s, cfg, spec)) for s in scenes]
    zero1 = {
        (s.depth.height, s.depth.width): OffsetField.zeros(1, s.depth.height, s.depth.width)
        for s, _ in prepared
    }

    losses: list[float] = []
    for epoch in range(cfg.epochs):
        total_loss = 0.0
        gw1 = np.zeros_like(w1.data, dtype=np.float64)
        gw2 = np.zeros_like(w2.data, dtype=np.float64)
        for scene, offsets in prepared:
            x = scene.features
            try:
                pre, hidden, logits = _forward(x, w1, w2, offsets, spec)
                loss, dlogits = _softmax_cross_entropy(logits.data, scene.labels)
                total_loss += loss
                z1 = zero1[(scene.depth.height, scene.depth.width)]
                dhidden, dw2 = za_conv_backward(
                    hidden, w2, z1, KernelSpec(1), FeatureTensor(dlogits)
                )
                dpre = FeatureTensor(dhidden.data * (pre.data > 0))
                _, dw1 = za_conv_backward(x, w1, offsets, spec, dpre)
            except ConfigError as exc:
                if "non-finite" in str(exc):
                    raise TrainingError(
                        f"training diverged at epoch {epoch}: {exc}", epoch=epoch
                    ) from exc
                raise
            gw1 += dw1.data
            gw2 += dw2.data
        total_loss /= len(prepared)
        if not np.isfinite(total_loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        losses.append(total_loss)
        if cfg.learning_rate > 0:
            new1 = (w1.data - cfg.learning_rate * gw1 / len(prepared)).astype(np.float32)
            new2 = (w2.data - cfg.learning_rate * gw2 / len(prepared)).astype(np.float32)
            if not (np.all(np.isfinite(new1)) and np.all(np.isfinite(new2))):
                raise TrainingError(f"weights became non-finite at epoch {epoch}", epoch=epoch)
            w1 = ConvWeights(new1)
            w2 = ConvWeights(new2)

    target = list(eval_scenes) if eval_scenes is not None else [s for s, _ in prepared]
    miou, acc = evaluate(target, (w1, w2), cfg)
    params = w1.param_count + w2.param_count
    return TrainResult(weights=(w1, w2), losses=losses, miou=miou, pixel_acc=acc, param_count=params)


def evaluate(scenes, weights, cfg: TrainConfig):
    """Mean (mIoU, pixel accuracy) of a trained model over scenes."""
    w1, w2 = weights
    spec = KernelSpec.same(cfg.kernel, dilation=cfg.dilation)
    mious = []
    accs = []
    for scene in scenes:
        offsets = _scene_offsets(scene, cfg, spec)
        _, _, logits = _forward(scene.features, w1, w2, offsets, spec)
        pred = np.argmax(logits.data, axis=0)
        miou, acc = segmentation_metrics(pred, scene.labels, w2.out_channels)
        mious.append(miou)
        accs.append(acc)
    return float(np.mean(mious)), float(np.mean(accs))


def paired_toy_runs(
    seeds,
    operators=("adapted", "standard"),
    epochs: int = 150,
    learning_rate: float = 0.5,
    hidden: int = 24,
    assumed_focal: float | None = None,
    kind: str = "corridor",
    h: int = 48,
    w: int = 64,
    train_scenes: int = 2,
) -> list[dict]:
    """Paired experiment rows: every operator sees identical scenes per seed.

    Each seed gets its own training scenes plus one held-out evaluation
    scene; returns one dict per (seed, operator) suitable for CSV/JSON.
    """
    rows = []
    for seed in seeds:
        train = [generate_scene(kind, h, w, seed=1000 + 10 * seed + i) for i in range(train_scenes)]
        evals = [generate_scene(kind, h, w, seed=9000 + seed)]
        for op in operators:
            cfg = TrainConfig(
                learning_rate=learning_rate,
                epochs=epochs,
                seed=seed,
                operator=op,
                hidden=hidden,
                assumed_focal=assumed_focal if op == "adapted" else None,
            )
            result = train_toy(train, cfg, evals)
            rows.append(
                {
                    "seed": seed,
                    "operator": op,
                    "epochs": epochs,
                    "final_loss": result.losses[-1],
                    "miou": result.miou,
                    "pixel_acc": result.pixel_acc,
                    "param_count": result.param_count,
                }
            )
    return rows


def bench(op: str, sizes, repeats: int = 5, channels: int = 8, kernel: int = 3) -> list[BenchRow]:
    """Wall-time one operator across square input sizes.

    Reports the median (and p95 for repeats > 1) of ``repeats`` runs and
    the learnable parameter count, which is identical for standard and
    adapted convolution.
    """
    known = {
        "standard_conv",
        "za_conv_direct",
        "za_conv_gathered",
        "standard_avg_pool",
        "za_avg_pool",
        "offsets",
    }
    if op not in known:
        raise ConfigError(f"unknown benchmark op {op!r}, expected one of {sorted(known)}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng(7)
    rows = []
    spec = KernelSpec.same(kernel)
    for size in sizes:
        x = FeatureTensor(rng.standard_normal((channels, size, size)).astype(np.float32))
        w = ConvWeights(
            rng.standard_normal((channels, channels, kernel, kernel)).astype(np.float32)
        )
        depth = DepthMap(
            (2.0 + 0.4 * np.sin(np.arange(size) / 7.0)[None, :] * np.ones((size, 1))).astype(np.float32)
        )
        offsets, _ = compute_offsets(depth, CameraIntrinsics(100.0, 100.0, size / 2, size / 2), spec, size, size)
        params = conv_param_count(channels, channels, kernel) if "conv" in op else 0

        def run():
            if op == "standard_conv":
                standard_conv(x, w, spec)
            elif op == "za_conv_direct":
                za_conv_forward(x, w, offsets, spec, method="direct")
            elif op == "za_conv_gathered":
                za_conv_forward(x, w, offsets, spec, method="gathered")
            elif op == "standard_avg_pool":
                standard_avg_pool(x, spec)
            elif op == "za_avg_pool":
                za_avg_pool(x, offsets, spec)
            else:
                compute_offsets(depth, CameraIntrinsics(100.0, 100.0, size / 2, size / 2), spec, size, size)

        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            run()
            times.append((time.perf_counter() - t0) * 1e3)
        times.sort()
        median = float(np.median(times))
        p95 = float(np.percentile(times, 95)) if repeats > 1 else None
        rows.append(BenchRow(op=op, size=int(size), param_count=params,
                             repeats=repeats, median_ms=median, p95_ms=p95))
    return rows
