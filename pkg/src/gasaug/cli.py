"""Batch command-line interface binding the pipeline stages.

Subcommands: generate, augment, resample, inject-noise, evaluate, iou, loss.
Stochastic subcommands require --seed; per-frame randomness comes solely
from derive_seed(master_seed, frame_id, stage_tag), so results are
independent of worker count and scheduling order. Every run that writes
files also writes a key=value manifest next to them; re-running with
--config <manifest> reproduces the outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .augment import AugmentParams, augment_frame
from .errors import DataError, GasAugError
from .evaluation import (
    Difficulty,
    EvalConfig,
    NoiseProtocolParams,
    average_precision_r40,
    inject_noise,
)
from .generation import generate_cloud
from .geometry import DetectionFrame
from .io import (
    DatasetLayout,
    RunConfig,
    load_pool,
    read_boxes,
    read_labels,
    read_point_cloud,
    read_predictions,
    read_sensor_spec,
    save_pool,
    write_gas_boxes,
    write_manifest,
    write_point_cloud,
)
from .loss import iou_matrix, noise_loss, total_loss
from .resampler import resample_to_sensor, sensor_preset
from .seeding import SeededRng, derive_seed

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.txt"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gasaug", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gasaug {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file with defaults (e.g. a run manifest)")
        return p

    p = add("generate", "grow a pool: surface-sample M gas clouds from the labeled sources")
    p.add_argument("--pool", help="pool directory with sources/ and pool_manifest.txt")
    p.add_argument("--count", type=int, help="number of clouds to generate")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--out", help="output pool directory (default: --pool)")
    p.add_argument("--workers", type=int, help="parallel workers (default 1)")

    p = add("augment", "insert pool gas clouds into a dataset's frames")
    p.add_argument("--dataset", help="input dataset root (clouds/ + labels/)")
    p.add_argument("--pool", help="pool directory with generated clouds")
    p.add_argument("--out", help="output dataset root")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--epoch", type=int, help="current epoch (default 0)")
    p.add_argument("--epochs", type=int, help="total epochs T (default 1)")
    p.add_argument("--p-gas", type=float, dest="p_gas", help="rear-placement probability")
    p.add_argument("--p-top", type=float, dest="p_top", help="top-placement probability")
    p.add_argument("--p-aug", type=float, dest="p_aug", help="pin p_aug instead of epoch/T schedule")
    p.add_argument("--kitti-camera-frame", action="store_true", default=None,
                   dest="kitti_camera_frame", help="labels are in KITTI camera frame")
    p.add_argument("--workers", type=int)

    p = add("resample", "re-impose the sensor scan grid on a dataset's clouds")
    p.add_argument("--dataset", help="input dataset root")
    p.add_argument("--sensor", help="sensor spec file or preset name (velodyne64, pandar40)")
    p.add_argument("--out", help="output dataset root")
    p.add_argument("--workers", type=int)

    p = add("inject-noise", "add uniform noise points around ground-truth boxes")
    p.add_argument("--dataset", help="input dataset root (clouds/ + labels/)")
    p.add_argument("--kprime", type=int, help="noise level k' (per-box count ~ U{0..k'})")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--out", help="output dataset root")
    p.add_argument("--dilation", type=float, help="horizontal box dilation in m (default 0.25)")
    p.add_argument("--kitti-camera-frame", action="store_true", default=None,
                   dest="kitti_camera_frame")
    p.add_argument("--workers", type=int)

    p = add("evaluate", "BEV / 3D average precision (R40) on the vehicle class")
    p.add_argument("--labels", help="ground-truth label directory")
    p.add_argument("--predictions", help="prediction directory (16-field files)")
    p.add_argument("--metric", choices=["bev", "3d", "both"], help="default both")
    p.add_argument("--iou-threshold", type=float, dest="iou_threshold")
    p.add_argument("--kitti-camera-frame", action="store_true", default=None,
                   dest="kitti_camera_frame")
    p.add_argument("--out", help="also write the table to this file")

    p = add("iou", "pairwise IoU matrix between two box files")
    p.add_argument("--boxes-a", dest="boxes_a", help="row boxes (label or prediction file)")
    p.add_argument("--boxes-b", dest="boxes_b", help="column boxes")
    p.add_argument("--metric", choices=["bev", "3d"], help="default 3d")
    p.add_argument("--kitti-camera-frame", action="store_true", default=None,
                   dest="kitti_camera_frame")
    p.add_argument("--out", help="also write the matrix to this file")

    p = add("loss", "noise-robustness loss between predictions and gas boxes")
    p.add_argument("--pred", help="prediction box file")
    p.add_argument("--gas", help="gas box file")
    p.add_argument("--beta", type=float, help="noise loss weight (default 0.1)")
    p.add_argument("--l-train", type=float, dest="l_train", help="detector loss value (default 0)")
    p.add_argument("--kitti-camera-frame", action="store_true", default=None,
                   dest="kitti_camera_frame")
    p.add_argument("--out", help="also write the breakdown to this file")

    return parser


_MISSING = object()


class _Options:
    """Effective option values: CLI flag, else config file, else default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = RunConfig.from_file(args.config) if args.config else None
        self.effective: dict[str, object] = {}

    def get(self, key: str, default=_MISSING, cast=str):
        value = getattr(self.args, key, None)
        if value is None and self.config is not None:
            raw = self.config.get(key)
            if raw is not None:
                if cast is bool:
                    value = raw.lower() in ("1", "true", "yes")
                else:
                    value = cast(raw)
        if value is None:
            if default is _MISSING:
                raise _UsageError(f"missing required option --{key.replace('_', '-')}")
            value = default
        self.effective[key] = value
        return value

    def get_path(self, key: str, default=_MISSING) -> str:
        """Path option, recorded resolved so manifests replay from any cwd."""
        value = self.get(key, default)
        if value is None:
            return value
        resolved = str(Path(value).expanduser().resolve())
        self.effective[key] = resolved
        return resolved

    def manifest(self, command: str) -> dict:
        values = {"command": command, "version": __version__}
        for key, val in self.effective.items():
            if val is None:
                continue
            values[key] = val
        return values


class _OutputGuard:
    """Removes this run's partial outputs on failure.

    Only paths that did not exist when planned are ever deleted; data from
    before the run is never touched.
    """

    def __init__(self, out_root: Path):
        self.out_root = out_root
        self.created_root = not out_root.exists()
        self.planned: list[Path] = []

    def plan(self, *paths: Path):
        self.planned.extend(p for p in paths if not p.exists())

    def cleanup(self):
        if self.created_root:
            shutil.rmtree(self.out_root, ignore_errors=True)
            return
        for path in self.planned:
            try:
                if path.is_file():
                    path.unlink()
            except OSError:
                pass


def _load_sensor(ref: str):
    path = Path(ref)
    if path.exists():
        return read_sensor_spec(path)
    try:
        return sensor_preset(ref)
    except KeyError:
        raise DataError(f"sensor '{ref}' is neither a file nor a known preset")


# ---------------------------------------------------------------------------
# per-frame workers (module level so process pools can pickle them)

_CTX: dict = {}


def _init_generate(pool_dir: str, master_seed: int):
    pool = load_pool(pool_dir)
    if not pool.sources:
        raise DataError(f"pool {pool_dir} has no sources")
    usable = []
    from .alphashape import delaunay3d
    from .errors import DegenerateGeometry, TooFewPoints

    for src in pool.sources:
        try:
            delaunay3d(src.xyz)
            usable.append(src)
        except (DegenerateGeometry, TooFewPoints) as exc:
            logger.warning("skipping pool source '%s': %s", src.frame_id, exc)
    if not usable:
        raise DataError("no reconstructable pool source")
    _CTX.update(sources=usable, master_seed=master_seed)


def _run_generate(task_index: int):
    rng = SeededRng(derive_seed(_CTX["master_seed"], f"{task_index:06d}", "generate"))
    src = _CTX["sources"][rng.randint(0, len(_CTX["sources"]) - 1)]
    return generate_cloud(src, rng)


def _init_augment(dataset: str, pool_dir: str, out: str, master_seed: int,
                  p_gas: float, p_top: float, p_aug, epoch: int, epochs: int,
                  camera_frame: bool):
    pool = load_pool(pool_dir)
    params = AugmentParams(
        p_gas=p_gas, p_top=p_top, p_aug=p_aug, epoch=epoch, total_epochs=epochs
    )
    _CTX.update(
        layout=DatasetLayout(dataset),
        out=DatasetLayout(out),
        pool=pool,
        params=params,
        master_seed=master_seed,
        camera_frame=camera_frame,
    )


def _run_augment(frame_id: str):
    layout: DatasetLayout = _CTX["layout"]
    out: DatasetLayout = _CTX["out"]
    cloud = read_point_cloud(layout.cloud_path(frame_id))
    gts = read_labels(layout.label_path(frame_id), _CTX["camera_frame"])
    rng = SeededRng(derive_seed(_CTX["master_seed"], frame_id, "augment"))
    result = augment_frame(DetectionFrame(cloud, gts), _CTX["pool"], _CTX["params"], rng)
    write_point_cloud(result.frame.cloud, out.cloud_path(frame_id))
    shutil.copyfile(layout.label_path(frame_id), out.label_path(frame_id))
    write_gas_boxes(result.gas_boxes, out.gas_path(frame_id))


def _init_resample(dataset: str, out: str, sensor_ref: str):
    _CTX.update(
        layout=DatasetLayout(dataset),
        out=DatasetLayout(out),
        sensor=_load_sensor(sensor_ref),
    )


def _copy_sidecars(layout: DatasetLayout, out: DatasetLayout, frame_id: str):
    for src, dst in (
        (layout.label_path(frame_id), out.label_path(frame_id)),
        (layout.gas_path(frame_id), out.gas_path(frame_id)),
        (layout.prediction_path(frame_id), out.prediction_path(frame_id)),
    ):
        if src.exists():
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)


def _run_resample(frame_id: str):
    layout: DatasetLayout = _CTX["layout"]
    out: DatasetLayout = _CTX["out"]
    cloud = read_point_cloud(layout.cloud_path(frame_id))
    write_point_cloud(resample_to_sensor(cloud, _CTX["sensor"]), out.cloud_path(frame_id))
    _copy_sidecars(layout, out, frame_id)


def _init_inject(dataset: str, out: str, master_seed: int, kprime: int,
                 dilation: float, camera_frame: bool):
    _CTX.update(
        layout=DatasetLayout(dataset),
        out=DatasetLayout(out),
        master_seed=master_seed,
        params=NoiseProtocolParams(kprime, dilation),
        camera_frame=camera_frame,
    )


def _run_inject(frame_id: str):
    layout: DatasetLayout = _CTX["layout"]
    out: DatasetLayout = _CTX["out"]
    cloud = read_point_cloud(layout.cloud_path(frame_id))
    gts = read_labels(layout.label_path(frame_id), _CTX["camera_frame"])
    rng = SeededRng(derive_seed(_CTX["master_seed"], frame_id, "inject"))
    noised = inject_noise(DetectionFrame(cloud, gts), _CTX["params"], rng)
    write_point_cloud(noised.cloud, out.cloud_path(frame_id))
    _copy_sidecars(layout, out, frame_id)


def _map_frames(frame_ids, workers: int, init, initargs, worker):
    """Run worker(frame_id) for every frame; order-independent by contract."""
    if workers <= 1:
        init(*initargs)
        return [worker(fid) for fid in frame_ids]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=init, initargs=initargs
    ) as pool:
        return list(pool.map(worker, frame_ids))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(opts: _Options) -> int:
    pool_dir = opts.get_path("pool")
    count = opts.get("count", cast=int)
    seed = opts.get("seed", cast=int)
    out = Path(opts.get_path("out", default=pool_dir))
    workers = opts.get("workers", default=1, cast=int)
    if count < 1:
        raise _UsageError("--count must be >= 1")

    load_pool(pool_dir)  # surface pool problems before any worker starts
    guard = _OutputGuard(out)
    guard.plan(out / "pool_manifest.txt", out / RUN_MANIFEST)
    guard.plan(*(out / "generated" / f"g{i:06d}.bin" for i in range(count)))
    try:
        clouds = _map_frames(
            list(range(count)), workers, _init_generate, (pool_dir, seed), _run_generate
        )
        pool = load_pool(pool_dir)
        pool.generated = clouds  # a generate run defines the pool's generated set
        out.mkdir(parents=True, exist_ok=True)
        save_pool(pool, out)
        write_manifest(out / RUN_MANIFEST, opts.manifest("generate"))
    except BaseException:
        guard.cleanup()
        raise
    print(f"generated {count} gas clouds -> {out}")
    return 0


def _run_dataset_command(opts, command, frame_ids, out_layout, workers, init, initargs):
    guard = _OutputGuard(out_layout.root)
    try:
        out_layout.clouds.mkdir(parents=True, exist_ok=True)
        out_layout.labels.mkdir(parents=True, exist_ok=True)
        if command == "augment":
            out_layout.gas_boxes.mkdir(parents=True, exist_ok=True)
        for fid in frame_ids:
            guard.plan(
                out_layout.cloud_path(fid),
                out_layout.label_path(fid),
                out_layout.gas_path(fid),
                out_layout.prediction_path(fid),
            )
        worker = {
            "augment": _run_augment,
            "resample": _run_resample,
            "inject-noise": _run_inject,
        }[command]
        _map_frames(frame_ids, workers, init, initargs, worker)
        write_manifest(out_layout.root / RUN_MANIFEST, opts.manifest(command))
    except BaseException:
        guard.cleanup()
        raise
    print(f"{command}: {len(frame_ids)} frames -> {out_layout.root}")
    return 0


def _cmd_augment(opts: _Options) -> int:
    dataset = opts.get_path("dataset")
    pool_dir = opts.get_path("pool")
    out = opts.get_path("out")
    seed = opts.get("seed", cast=int)
    epoch = opts.get("epoch", default=0, cast=int)
    epochs = opts.get("epochs", default=1, cast=int)
    p_gas = opts.get("p_gas", default=0.5, cast=float)
    p_top = opts.get("p_top", default=0.1, cast=float)
    p_aug = opts.get("p_aug", default=None, cast=float)
    camera = opts.get("kitti_camera_frame", default=False, cast=bool)
    workers = opts.get("workers", default=1, cast=int)

    layout = DatasetLayout(dataset)
    frame_ids = layout.validate()
    if not frame_ids:
        raise DataError(f"no frames found under {dataset}")
    load_pool(pool_dir)  # surface pool problems before any worker starts
    initargs = (dataset, pool_dir, out, seed, p_gas, p_top, p_aug, epoch, epochs, camera)
    return _run_dataset_command(
        opts, "augment", frame_ids, DatasetLayout(out), workers, _init_augment, initargs
    )


def _cmd_resample(opts: _Options) -> int:
    dataset = opts.get_path("dataset")
    sensor = opts.get("sensor", cast=str)
    if Path(sensor).exists():
        sensor = opts.get_path("sensor")  # file reference: pin the resolved path
    out = opts.get_path("out")
    workers = opts.get("workers", default=1, cast=int)

    layout = DatasetLayout(dataset)
    frame_ids = layout.validate()
    if not frame_ids:
        raise DataError(f"no frames found under {dataset}")
    _load_sensor(sensor)  # fail fast on bad references
    return _run_dataset_command(
        opts, "resample", frame_ids, DatasetLayout(out), workers,
        _init_resample, (dataset, out, sensor),
    )


def _cmd_inject_noise(opts: _Options) -> int:
    dataset = opts.get_path("dataset")
    kprime = opts.get("kprime", cast=int)
    seed = opts.get("seed", cast=int)
    out = opts.get_path("out")
    dilation = opts.get("dilation", default=0.25, cast=float)
    camera = opts.get("kitti_camera_frame", default=False, cast=bool)
    workers = opts.get("workers", default=1, cast=int)

    layout = DatasetLayout(dataset)
    frame_ids = layout.validate()
    if not frame_ids:
        raise DataError(f"no frames found under {dataset}")
    initargs = (dataset, out, seed, kprime, dilation, camera)
    return _run_dataset_command(
        opts, "inject-noise", frame_ids, DatasetLayout(out), workers,
        _init_inject, initargs,
    )


def _emit(text: str, out_path):
    print(text, end="")
    if out_path:
        Path(out_path).write_text(text)


def _cmd_evaluate(opts: _Options) -> int:
    labels_dir = Path(opts.get_path("labels"))
    preds_dir = Path(opts.get_path("predictions"))
    metric = opts.get("metric", default="both", cast=str)
    threshold = opts.get("iou_threshold", default=0.7, cast=float)
    camera = opts.get("kitti_camera_frame", default=False, cast=bool)
    out = opts.get("out", default=None, cast=str)

    frame_ids = sorted(p.stem for p in labels_dir.glob("*.txt"))
    if not frame_ids:
        raise DataError(f"no label files under {labels_dir}")
    frames = []
    for fid in frame_ids:
        gts = read_labels(labels_dir / f"{fid}.txt", camera)
        pred_path = preds_dir / f"{fid}.txt"
        preds = read_predictions(pred_path, camera) if pred_path.exists() else []
        frames.append((preds, gts))

    metrics = ("bev", "3d") if metric == "both" else (metric,)
    lines = ["# metric difficulty ap tp fp fn"]
    for m in metrics:
        result = average_precision_r40(frames, EvalConfig(threshold, m))
        for name, difficulty in (
            ("easy", Difficulty.EASY),
            ("moderate", Difficulty.MODERATE),
            ("hard", Difficulty.HARD),
        ):
            c = result.counts[difficulty]
            lines.append(
                f"{m} {name} {result.ap(difficulty):.2f} {c.tp} {c.fp} {c.fn}"
            )
    _emit("".join(line + "\n" for line in lines), out)
    if out:
        write_manifest(Path(out).with_suffix(".manifest.txt"), opts.manifest("evaluate"))
    return 0


def _cmd_iou(opts: _Options) -> int:
    camera = opts.get("kitti_camera_frame", default=False, cast=bool)
    boxes_a = read_boxes(opts.get_path("boxes_a"), camera)
    boxes_b = read_boxes(opts.get_path("boxes_b"), camera)
    metric = opts.get("metric", default="3d", cast=str)
    out = opts.get("out", default=None, cast=str)

    if metric == "bev":
        from .loss import bev_iou

        rows = [[bev_iou(a, b) for b in boxes_b] for a in boxes_a]
    else:
        rows = iou_matrix(boxes_a, boxes_b).values.tolist()
    text = "".join(" ".join(f"{v:.9f}" for v in row) + "\n" for row in rows)
    _emit(text, out)
    if out:
        write_manifest(Path(out).with_suffix(".manifest.txt"), opts.manifest("iou"))
    return 0


def _cmd_loss(opts: _Options) -> int:
    camera = opts.get("kitti_camera_frame", default=False, cast=bool)
    preds = read_boxes(opts.get_path("pred"), camera)
    gas = read_boxes(opts.get_path("gas"), camera)
    beta = opts.get("beta", default=0.1, cast=float)
    l_train = opts.get("l_train", default=0.0, cast=float)
    out = opts.get("out", default=None, cast=str)

    breakdown = total_loss(l_train, noise_loss(preds, gas), beta)
    text = (
        f"l_train={breakdown.l_train!r}\n"
        f"l_noise={breakdown.l_noise!r}\n"
        f"beta={breakdown.beta!r}\n"
        f"total={breakdown.total!r}\n"
    )
    _emit(text, out)
    if out:
        write_manifest(Path(out).with_suffix(".manifest.txt"), opts.manifest("loss"))
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "augment": _cmd_augment,
    "resample": _cmd_resample,
    "inject-noise": _cmd_inject_noise,
    "evaluate": _cmd_evaluate,
    "iou": _cmd_iou,
    "loss": _cmd_loss,
}


def cli_dispatch(argv=None) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](_Options(args))
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (GasAugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit:
        raise
    except Exception as exc:  # pragma: no cover - unexpected bugs
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli_dispatch())
