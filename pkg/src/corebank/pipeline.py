"""Sequential-task harness: train stages, evaluate, persist, report.

A run walks the configured task order. Stage k streams task k's training
embeddings through the shared memory bank one image at a time, saves a
bank snapshot, and (by default) scores the test sets of every task seen so
far, recording image-level AUROC and pixel-level AUPR. After the last
stage the per-task values, their averages and the forgetting measure go
into report.txt (human table) and report.json (machine sidecar with every
stage-by-task entry). Reports carry no timestamps or absolute paths, so a
repeated run with the same config and data is byte-identical; timing lives
in the per-stage records and the time-consumption curve only.

A stage whose record and snapshot already exist under the output directory
is reloaded rather than recomputed, which makes stage-wise resumption
equivalent to a single uninterrupted run.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coreset import MemoryBank, greedy_kcenter, random_sample
from .metrics import ScoredSet, aupr, auroc, forgetting
from .scoring import build_map, image_score, normalize_map_u8, score_patches
from .tensor_io import (
    EmbeddingBatch,
    load_bank,
    load_task,
    read_kv_file,
    read_tensor,
    save_bank,
    write_tensor,
)

METRIC_KINDS = ("I-AUROC", "P-AUPR")
REPORT_TXT = "report.txt"
REPORT_JSON = "report.json"
TIME_CURVE = "time_curve.txt"
JOINT_SAMPLERS = ("incremental", "greedy-kcenter", "random")


class PipelineError(Exception):
    pass


@dataclass
class RunConfig:
    dataset_root: str
    task_order: list
    output_dir: str
    coreset_capacity: int = 10000
    neighbor_b: int = 9
    smoothing_sigma: float = 4.0
    batch_rows: int = 784
    eval_every_stage: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        self.task_order = list(self.task_order)
        if not self.task_order:
            raise ValueError("task_order must not be empty")
        if len(set(self.task_order)) != len(self.task_order):
            raise ValueError("task_order contains duplicates")
        if self.coreset_capacity < 1:
            raise ValueError(f"coreset_capacity must be >= 1, got {self.coreset_capacity}")
        if self.neighbor_b < 2:
            raise ValueError(f"neighbor_b must be >= 2, got {self.neighbor_b}")
        if self.batch_rows < 1:
            raise ValueError(f"batch_rows must be >= 1, got {self.batch_rows}")
        if self.smoothing_sigma < 0:
            raise ValueError(f"smoothing_sigma must be >= 0, got {self.smoothing_sigma}")


_CONFIG_PARSERS = {
    "dataset_root": str,
    "output_dir": str,
    "task_order": lambda v: [t.strip() for t in v.split(",") if t.strip()],
    "coreset_capacity": int,
    "neighbor_b": int,
    "smoothing_sigma": float,
    "batch_rows": int,
    "eval_every_stage": lambda v: _parse_bool(v),
    "rng_seed": int,
}


def _parse_bool(v: str) -> bool:
    lv = str(v).strip().lower()
    if lv in ("1", "true", "yes", "on"):
        return True
    if lv in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def config_from_file(path, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a flat key=value file; overrides win."""
    raw = read_kv_file(path)
    merged = dict(raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            merged[key] = val
    kwargs = {}
    for key, val in merged.items():
        if key not in _CONFIG_PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _CONFIG_PARSERS[key](val) if isinstance(val, str) else val
    return RunConfig(**kwargs)


@dataclass
class ImageUpdate:
    source_id: str
    inserted: int
    evicted: int
    iterations: int
    wall_time: float


@dataclass
class StageRecord:
    stage: int
    task_id: str
    per_image: list = field(default_factory=list)
    metric_rows: dict = field(default_factory=dict)
    final_min_pair: float = np.inf


def _fmt(x) -> str:
    return "n/a" if x is None else format(float(x), ".17g")


def _parse_val(s: str):
    return None if s == "n/a" else float(s)


def write_record(record: StageRecord, path) -> None:
    lines = [
        f"stage = {record.stage}",
        f"task = {record.task_id}",
        f"final_min_pair = {_fmt(record.final_min_pair)}",
        "[images]",
    ]
    for im in record.per_image:
        lines.append(
            f"{im.source_id}\t{im.inserted}\t{im.evicted}\t{im.iterations}"
            f"\t{im.wall_time:.9g}"
        )
    for kind, row in record.metric_rows.items():
        lines.append(f"[metrics {kind}]")
        lines.append("\t".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_record(path) -> StageRecord:
    text = Path(path).read_text(encoding="utf-8")
    record = StageRecord(stage=0, task_id="")
    section = None
    for line in text.splitlines():
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section.startswith("metrics "):
                record.metric_rows[section[len("metrics "):]] = None
            continue
        if section is None:
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key == "stage":
                record.stage = int(val)
            elif key == "task":
                record.task_id = val
            elif key == "final_min_pair":
                record.final_min_pair = float(val)
        elif section == "images":
            src, ins, ev, it, wt = line.split("\t")
            record.per_image.append(
                ImageUpdate(src, int(ins), int(ev), int(it), float(wt))
            )
        elif section.startswith("metrics "):
            kind = section[len("metrics "):]
            record.metric_rows[kind] = [_parse_val(v) for v in line.split("\t")]
    for kind, row in list(record.metric_rows.items()):
        if row is None:
            record.metric_rows[kind] = []
    return record


# -- evaluation --------------------------------------------------------


def _evaluate_task(bank, ds, cfg: RunConfig):
    """Score one task's test set. Returns (i-auroc, p-aupr, images, maps).

    images is a list of (source_id, label, score); maps a float32
    [n, H, W] stack of anomaly maps. Either metric is None when its
    ground truth is single-class.
    """
    img_scores, img_labels, maps, mask_stack = [], [], [], []
    h, w = ds.image_size
    for sample in ds.test:
        patches = score_patches(bank, sample.batch)
        s = image_score(bank, patches, sample.batch, b=cfg.neighbor_b)
        amap = build_map(patches, ds.image_size, cfg.smoothing_sigma, image_score=s)
        img_scores.append(s)
        img_labels.append(sample.label)
        maps.append(amap.pixel_scores)
        mask = sample.mask if sample.mask is not None else np.zeros((h, w), np.uint8)
        mask_stack.append(mask)
    maps = np.stack(maps)
    masks = np.stack(mask_stack)
    labels = np.asarray(img_labels)
    i_auroc = None
    if 0 < labels.sum() < labels.size:
        i_auroc = auroc(ScoredSet(np.asarray(img_scores), labels, kind="image"))
    p_aupr = None
    if masks.any():
        p_aupr = aupr(ScoredSet(maps.ravel(), (masks.ravel() > 0).astype(np.int64),
                                kind="pixel"))
    images = [(ds.test[i].batch.source_id, int(labels[i]), img_scores[i])
              for i in range(len(img_scores))]
    return i_auroc, p_aupr, images, maps


def _write_scores(scores_dir: Path, task_id: str, images, maps) -> None:
    scores_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{src}\t{lab}\t{format(sc, '.17g')}" for src, lab, sc in images]
    (scores_dir / f"{task_id}_images.txt").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )
    write_tensor(maps, scores_dir / f"{task_id}_pixels.cadt")


def _stream_update(bank: MemoryBank, batch: EmbeddingBatch,
                   batch_rows: int) -> tuple[ImageUpdate, float]:
    """Feed one image through the bank in chunks of at most batch_rows rows."""
    emb = batch.embeddings
    prov = (batch.task_id, batch.source_id)
    inserted = evicted = iterations = 0
    wall = 0.0
    pair = np.inf
    for start in range(0, emb.shape[0], batch_rows):
        stats = bank.update(emb[start : start + batch_rows], provenance=prov)
        inserted += stats.inserted
        evicted += stats.evicted
        iterations += stats.iterations
        wall += stats.wall_time
        pair = stats.final_min_pair
    return ImageUpdate(batch.source_id, inserted, evicted, iterations, wall), pair


def _stage_dir(out: Path, k: int) -> Path:
    return out / "stages" / f"stage_{k}"


def _stage_complete(stage_dir: Path) -> bool:
    return (stage_dir / "record.txt").is_file() and (stage_dir / "bank.cadt.meta").is_file()


class _TaskCache:
    def __init__(self, root):
        self.root = root
        self._cache = {}

    def get(self, task_id: str):
        if task_id not in self._cache:
            self._cache[task_id] = load_task(self.root, task_id)
        return self._cache[task_id]


def run_sequence(cfg: RunConfig, max_stages: int | None = None, resume: bool = True,
                 log=None) -> list[StageRecord]:
    """Run the sequential protocol, returning one StageRecord per stage.

    max_stages truncates the run (no final report is written then); resume
    reuses any stage whose artifacts are already on disk.
    """
    out = Path(cfg.output_dir)
    (out / "stages").mkdir(parents=True, exist_ok=True)
    n_tasks = len(cfg.task_order)
    horizon = n_tasks if max_stages is None else min(max_stages, n_tasks)
    tasks = _TaskCache(cfg.dataset_root)
    bank = MemoryBank(cfg.coreset_capacity)
    records = []
    for k in range(1, horizon + 1):
        task_id = cfg.task_order[k - 1]
        stage_dir = _stage_dir(out, k)
        if resume and _stage_complete(stage_dir):
            record = parse_record(stage_dir / "record.txt")
            if record.stage != k or record.task_id != task_id:
                raise PipelineError(
                    f"stage {k} (task {task_id}): stored record is for "
                    f"stage {record.stage} (task {record.task_id})"
                )
            bank = MemoryBank.from_snapshot(load_bank(stage_dir / "bank.cadt"))
            records.append(record)
            if log:
                log(f"stage {k}/{horizon} [{task_id}]: reused existing artifacts")
            continue
        try:
            ds = tasks.get(task_id)
        except Exception as exc:
            raise PipelineError(f"stage {k} (task {task_id}): {exc}") from exc
        per_image = []
        pair = np.inf
        for batch in ds.train:
            im, pair = _stream_update(bank, batch, cfg.batch_rows)
            per_image.append(im)
        stage_dir.mkdir(parents=True, exist_ok=True)
        save_bank(bank.to_snapshot(), stage_dir / "bank.cadt")
        record = StageRecord(stage=k, task_id=task_id, per_image=per_image,
                             final_min_pair=pair)
        if cfg.eval_every_stage or k == horizon:
            rows = {kind: [] for kind in METRIC_KINDS}
            for j in range(1, k + 1):
                eval_task = cfg.task_order[j - 1]
                try:
                    eds = tasks.get(eval_task)
                    i_auroc, p_aupr, images, maps = _evaluate_task(bank, eds, cfg)
                except PipelineError:
                    raise
                except Exception as exc:
                    raise PipelineError(
                        f"stage {k} (task {task_id}): evaluating {eval_task}: {exc}"
                    ) from exc
                rows["I-AUROC"].append(i_auroc)
                rows["P-AUPR"].append(p_aupr)
                _write_scores(stage_dir / "scores", eval_task, images, maps)
            record.metric_rows = rows
        write_record(record, stage_dir / "record.txt")
        records.append(record)
        if log:
            row = record.metric_rows.get("I-AUROC")
            shown = " ".join("n/a" if v is None else f"{v:.4f}" for v in row) if row else "-"
            log(f"stage {k}/{horizon} [{task_id}]: bank={len(bank)} I-AUROC: {shown}")
    if horizon == n_tasks:
        _write_reports(cfg, records, out)
        emit_time_curve(records, out / TIME_CURVE)
    return records


def run_joint(cfg: RunConfig, sampler: str = "incremental", log=None) -> list[StageRecord]:
    """Train on the pooled embeddings of all tasks at once, then evaluate all.

    sampler picks how the bank is built from the pool: 'incremental' streams
    images through the usual update rule, 'greedy-kcenter' and 'random' do a
    one-shot selection of min(capacity, pool size) elements. The artifacts
    mirror a single-stage sequential run.
    """
    if sampler not in JOINT_SAMPLERS:
        raise PipelineError(f"unknown sampler {sampler!r}, pick from {JOINT_SAMPLERS}")
    out = Path(cfg.output_dir)
    (out / "stages").mkdir(parents=True, exist_ok=True)
    tasks = _TaskCache(cfg.dataset_root)
    datasets = []
    for task_id in cfg.task_order:
        try:
            datasets.append(tasks.get(task_id))
        except Exception as exc:
            raise PipelineError(f"joint run (task {task_id}): {exc}") from exc
    per_image = []
    pair = np.inf
    if sampler == "incremental":
        bank = MemoryBank(cfg.coreset_capacity)
        for ds in datasets:
            for batch in ds.train:
                im, pair = _stream_update(bank, batch, cfg.batch_rows)
                per_image.append(im)
    else:
        pool = np.vstack([b.embeddings for ds in datasets for b in ds.train])
        prov = [(b.task_id, b.source_id)
                for ds in datasets for b in ds.train for _ in range(b.n)]
        k = min(cfg.coreset_capacity, pool.shape[0])
        if sampler == "greedy-kcenter":
            bank = greedy_kcenter(pool, k, seed_index=0, provenance=prov,
                                  capacity=cfg.coreset_capacity)
        else:
            bank = random_sample(pool, k, cfg.rng_seed, provenance=prov,
                                 capacity=cfg.coreset_capacity)
        mp = bank.min_pair()
        pair = np.inf if mp is None else mp[0]
    stage_dir = _stage_dir(out, 1)
    stage_dir.mkdir(parents=True, exist_ok=True)
    save_bank(bank.to_snapshot(), stage_dir / "bank.cadt")
    record = StageRecord(stage=1, task_id="+".join(cfg.task_order),
                         per_image=per_image, final_min_pair=pair)
    rows = {kind: [] for kind in METRIC_KINDS}
    for task_id, ds in zip(cfg.task_order, datasets):
        i_auroc, p_aupr, images, maps = _evaluate_task(bank, ds, cfg)
        rows["I-AUROC"].append(i_auroc)
        rows["P-AUPR"].append(p_aupr)
        _write_scores(stage_dir / "scores", task_id, images, maps)
        if log:
            shown = "n/a" if i_auroc is None else f"{i_auroc:.4f}"
            log(f"joint [{task_id}]: I-AUROC {shown}")
    record.metric_rows = rows
    write_record(record, stage_dir / "record.txt")
    records = [record]
    _write_reports(cfg, records, out)
    emit_time_curve(records, out / TIME_CURVE)
    return records


# -- reporting ---------------------------------------------------------


def _metric_summary(records, kind, task_order):
    """Final per-task values, their mean, and forgetting for one metric kind.

    Works off the last record that carries rows for the kind. Forgetting
    needs at least two recorded stages with complete history; otherwise it
    comes back as (None, None).
    """
    staged = [(r.stage, r.metric_rows[kind]) for r in records
              if r.metric_rows.get(kind)]
    if not staged:
        return None, None, None, None
    final_stage, final_row = staged[-1]
    per_task = {task_order[j]: final_row[j] for j in range(len(final_row))}
    defined = [v for v in final_row if v is not None]
    average = float(np.mean(defined)) if defined else None
    fm = None
    per_task_f = None
    rows = [row for _, row in staged]
    triangular = (len(rows) >= 2
                  and all(len(rows[i]) == i + 1 for i in range(len(rows)))
                  and all(v is not None for row in rows for v in row))
    if triangular:
        per_vals, fm = forgetting(rows)
        per_task_f = {task_order[j]: per_vals[j] for j in range(len(per_vals))}
    return per_task, average, per_task_f, fm


def _render_report(cfg: RunConfig, records) -> str:
    width = max([len(t) for t in cfg.task_order] + [9])
    lines = [
        "continual anomaly detection report",
        f"tasks = {', '.join(cfg.task_order)}",
        f"coreset_capacity = {cfg.coreset_capacity}",
        f"neighbor_b = {cfg.neighbor_b}",
        f"smoothing_sigma = {cfg.smoothing_sigma:g}",
        f"batch_rows = {cfg.batch_rows}",
        f"rng_seed = {cfg.rng_seed}",
    ]
    def fmt(v):
        return "n/a" if v is None else f"{v:.6f}"
    for kind in METRIC_KINDS:
        lines.append("")
        lines.append(f"[{kind}]")
        for r in records:
            row = r.metric_rows.get(kind)
            if row:
                lines.append(f"stage {r.stage}: " + " ".join(fmt(v) for v in row))
        per_task, average, per_task_f, fm = _metric_summary(records, kind, cfg.task_order)
        if per_task is None:
            lines.append("no evaluations recorded")
            continue
        lines.append("final per task:")
        for task, v in per_task.items():
            lines.append(f"  {task:<{width}} {fmt(v)}")
        lines.append(f"  {'average':<{width}} {fmt(average)}")
        if per_task_f is not None:
            lines.append("forgetting per task:")
            for task, v in per_task_f.items():
                lines.append(f"  {task:<{width}} {fmt(v)}")
            lines.append(f"  {'FM':<{width}} {fmt(fm)}")
        else:
            lines.append("forgetting: n/a (needs evaluations from at least two stages)")
    return "\n".join(lines) + "\n"


def _report_payload(cfg: RunConfig, records) -> dict:
    payload = {
        "config": {
            "task_order": cfg.task_order,
            "coreset_capacity": cfg.coreset_capacity,
            "neighbor_b": cfg.neighbor_b,
            "smoothing_sigma": cfg.smoothing_sigma,
            "batch_rows": cfg.batch_rows,
            "rng_seed": cfg.rng_seed,
        },
        "stages": [
            {
                "stage": r.stage,
                "task": r.task_id,
                "metrics": {k: row for k, row in r.metric_rows.items()},
            }
            for r in records
        ],
        "final": {},
    }
    for kind in METRIC_KINDS:
        per_task, average, per_task_f, fm = _metric_summary(records, kind, cfg.task_order)
        payload["final"][kind] = {
            "per_task": per_task,
            "average": average,
            "forgetting_per_task": per_task_f,
            "fm": fm,
        }
    return payload


def _write_reports(cfg: RunConfig, records, out: Path) -> None:
    (out / REPORT_TXT).write_text(_render_report(cfg, records), encoding="utf-8")
    payload = _report_payload(cfg, records)
    (out / REPORT_JSON).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def emit_time_curve(records, path=None) -> list[tuple[int, float, int]]:
    """Per-image update timings across the whole run.

    Returns (global image index from 1, seconds, task-boundary flag) per
    trained image; the flag is 1 on the first image of each stage. Writes
    the series as tab-separated text when path is given.
    """
    series = []
    idx = 0
    for record in records:
        for pos, im in enumerate(record.per_image):
            idx += 1
            series.append((idx, im.wall_time, 1 if pos == 0 else 0))
    if path is not None:
        lines = [f"{i}\t{t:.9g}\t{b}" for i, t, b in series]
        Path(path).write_text(
            ("\n".join(lines) + "\n") if lines else "", encoding="utf-8"
        )
    return series


# -- one-off scoring ----------------------------------------------------


def score_one(bank_path, embedding_path, out_prefix, neighbor_b: int = 9,
              smoothing_sigma: float = 4.0, image_size=None):
    """Score a single stored embedding grid against a saved bank.

    Writes <prefix>_map.cadt (raw f32), <prefix>_map_u8.cadt (min-max
    normalized to this one map, bounds recorded in the score file) and
    <prefix>_score.txt. image_size defaults to 8 pixels per patch cell.
    Returns the AnomalyMap.
    """
    bank = MemoryBank.from_snapshot(load_bank(bank_path))
    arr = read_tensor(embedding_path, dtype="f32")
    if arr.ndim != 3:
        raise PipelineError(
            f"{embedding_path}: expected a [Hp, Wp, D] embedding grid, got shape {arr.shape}"
        )
    hp, wp, d = arr.shape
    batch = EmbeddingBatch(
        embeddings=arr.reshape(hp * wp, d),
        grid=(hp, wp),
        source_id=Path(embedding_path).name,
    )
    if image_size is None:
        image_size = (hp * 8, wp * 8)
    patches = score_patches(bank, batch)
    s = image_score(bank, patches, batch, b=neighbor_b)
    amap = build_map(patches, image_size, smoothing_sigma, image_score=s)
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(amap.pixel_scores, Path(str(prefix) + "_map.cadt"))
    lo = float(amap.pixel_scores.min())
    hi = float(amap.pixel_scores.max())
    write_tensor(normalize_map_u8(amap.pixel_scores, lo, hi),
                 Path(str(prefix) + "_map_u8.cadt"))
    Path(str(prefix) + "_score.txt").write_text(
        f"source = {batch.source_id}\n"
        f"image_score = {format(s, '.17g')}\n"
        f"map_min = {format(lo, '.17g')}\n"
        f"map_max = {format(hi, '.17g')}\n",
        encoding="utf-8",
    )
    return amap


def recompute_metrics(run_dir, dataset_root=None) -> str:
    """Rebuild metric rows from the score files stored under a run directory.

    Image-level AUROC comes straight from the *_images.txt files. Pixel
    AUPR additionally needs ground-truth masks, so it is only recomputed
    when dataset_root is given. Returns a printable summary.
    """
    run_dir = Path(run_dir)
    stage_dirs = sorted(
        (p for p in (run_dir / "stages").glob("stage_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_")[1]),
    )
    if not stage_dirs:
        raise PipelineError(f"no stages found under {run_dir}")
    cache = _TaskCache(dataset_root) if dataset_root else None
    lines = []
    for stage_dir in stage_dirs:
        record = parse_record(stage_dir / "record.txt")
        lines.append(f"stage {record.stage} ({record.task_id}):")
        scores_dir = stage_dir / "scores"
        for img_file in sorted(scores_dir.glob("*_images.txt")):
            task_id = img_file.name[: -len("_images.txt")]
            rows = [ln.split("\t") for ln in
                    img_file.read_text(encoding="utf-8").splitlines() if ln]
            labels = np.array([int(r[1]) for r in rows])
            scores = np.array([float(r[2]) for r in rows])
            if 0 < labels.sum() < labels.size:
                val = f"{auroc(ScoredSet(scores, labels)):.6f}"
            else:
                val = "n/a"
            out = f"  {task_id}: I-AUROC {val}"
            if cache is not None:
                maps = read_tensor(stage_dir / "scores" / f"{task_id}_pixels.cadt",
                                   dtype="f32")
                ds = cache.get(task_id)
                masks = np.stack([
                    s.mask if s.mask is not None
                    else np.zeros(ds.image_size, np.uint8)
                    for s in ds.test
                ])
                if masks.any():
                    p = aupr(ScoredSet(maps.ravel(),
                                       (masks.ravel() > 0).astype(np.int64),
                                       kind="pixel"))
                    out += f"  P-AUPR {p:.6f}"
                else:
                    out += "  P-AUPR n/a"
            lines.append(out)
    return "\n".join(lines) + "\n"
