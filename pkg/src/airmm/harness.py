"""Training, evaluation and the ablation driver.

Task routing follows the two-area layout produced by ``gen``: channel tasks
train and test on the first area, environment tasks on the second (a
single-area directory serves both).  ``pooled=True`` concatenates every
area for every task instead.

A run is a deterministic function of (seed, config, data): the batch order
of epoch ``e`` comes from a stream keyed by (seed, e), so a run can stop
after any step, save a :class:`TrainState`, and resume bit-exactly.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import rng as rngmod
from .backbone import init_backbone, load_backbone
from .encoders import load_encoders
from .errors import ConfigError, DependencyError, EvaluationError, CheckpointError
from .instructions import TASK_ORDER, TaskSpec
from .model import CONFIGS, GROUPS, ModelSpec, UniversalModel, load_model
from .numerics import Adam, Tensor
from .scene import Dataset, load_dataset
from .tasks import MetricReport, evaluate_task, task_loss

log = logging.getLogger(__name__)

CSV_HEADER = ("config", "task", "metric", "value", "n_samples", "seed")
HISTORY_HEADER = ("epoch", "task", "metric", "value")
LOSS_RING = 64
_AREA_FILE = re.compile(r"area_(\d{5})\.(train|test)\.aimm$")


@dataclass
class RunConfig:
    config: str = "full"
    seed: int = 0
    data_dir: str = "data"
    out_dir: str | None = None
    encoders_path: str | None = None
    backbone_path: str | None = None
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    pooled: bool = False

    def __post_init__(self):
        if self.config not in CONFIGS:
            raise ConfigError(f"unknown configuration {self.config!r}; expected one of {', '.join(CONFIGS)}")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs must be >= 0, batch_size >= 1 and lr > 0")

    @property
    def encoders_file(self) -> Path:
        return Path(self.encoders_path) if self.encoders_path else Path(self.data_dir) / "encoders.aimw"

    @property
    def backbone_file(self) -> Path:
        return Path(self.backbone_path) if self.backbone_path else Path(self.data_dir) / "backbone.aimb"

    def with_overrides(self, settings: dict) -> "RunConfig":
        """Apply string key=value settings, converting to each field's type."""
        known = {f.name: f for f in fields(self)}
        vals = asdict(self)
        for key, raw in settings.items():
            if key not in known:
                raise ConfigError(f"unknown setting {key!r}")
            cur = vals[key]
            try:
                if isinstance(cur, bool):
                    if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                        raise ValueError(raw)
                    vals[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(cur, int):
                    vals[key] = int(raw)
                elif isinstance(cur, float):
                    vals[key] = float(raw)
                else:
                    vals[key] = raw
            except ValueError:
                raise ConfigError(f"setting {key}={raw!r} has the wrong type") from None
        return RunConfig(**vals)


def read_settings(path) -> dict[str, str]:
    """UTF-8 ``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


# -- data ---------------------------------------------------------------------

def area_indices(data_dir) -> list[int]:
    d = Path(data_dir)
    if not d.is_dir():
        raise DependencyError("gen", d)
    found = sorted({int(m.group(1)) for p in d.iterdir() if (m := _AREA_FILE.search(p.name)) and m.group(2) == "train"})
    if not found:
        raise DependencyError("gen", d)
    return found


def _load_split(data_dir, areas, split) -> Dataset | None:
    parts = []
    for a in areas:
        p = Path(data_dir) / f"area_{a:05d}.{split}.aimm"
        if p.is_file():
            ds = load_dataset(p)
            ds.side = np.full(len(ds), float(ds.metadata["side_length"]))
            ds.scale = np.full(len(ds), float(ds.metadata["csi_rms"]))
            parts.append(ds)
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    out = Dataset.concatenate(parts)
    out.side = np.concatenate([p.side for p in parts])
    out.scale = np.concatenate([p.scale for p in parts])
    return out


def task_areas(data_dir, pooled: bool = False) -> dict[str, list[int]]:
    areas = area_indices(data_dir)
    if pooled:
        return {"channel": areas, "environment": areas}
    return {"channel": [areas[0]], "environment": [areas[1] if len(areas) > 1 else areas[0]]}


@dataclass
class TaskData:
    spec: TaskSpec
    feats: Tensor  # fixed feature map of the modality input
    target: object  # training-unit targets
    labels: dict  # metric-unit labels

    def __len__(self):
        return self.feats.shape[0]


def _task_data(spec: TaskSpec, ds: Dataset, enc, pl_stats) -> TaskData:
    if spec.modality == "channel":
        x = ds.csi.reshape(len(ds), -1)
        inter = np.empty((len(ds), 2 * x.shape[1]))
        inter[:, 0::2], inter[:, 1::2] = x.real, x.imag
        feats = enc.channel_tensor(inter / ds.scale[:, None])
    else:
        feats = enc.environment_tensor(ds.environment_inputs())
    pl_mean, pl_std = pl_stats
    labels = {"position": ds.position, "side_length": ds.side[:, None], "los": ds.los,
              "precoder": ds.precoder, "beam_index": ds.beam_index, "path_loss_db": ds.path_loss_db,
              "pl_mean": pl_mean, "pl_std": pl_std}
    target = {
        "positioning": ds.position / ds.side[:, None],
        "los_nlos": ds.los.astype(np.int64),
        "precoding": ds.precoder,
        "beam_selection": ds.beam_index,
        "path_loss": ((ds.path_loss_db - pl_mean) / pl_std)[:, None],
    }[spec.task_id]
    return TaskData(spec, feats, target, labels)


def load_task_data(data_dir, model: UniversalModel, split: str, pooled: bool, pl_stats=None):
    """Per-task data for one split, and the path-loss standardisation used."""
    routes = task_areas(data_dir, pooled)
    sets = {m: _load_split(data_dir, routes[m], split) for m in routes}
    for m, ds in sets.items():
        if ds is None or len(ds) == 0:
            if split == "train":
                raise DependencyError("gen", Path(data_dir))
            raise EvaluationError(f"empty {split} split for {m} tasks in {data_dir}")
        if ds.n_t != model.spec.n_t or ds.n_c != model.spec.n_c:
            raise CheckpointError(f"data has {ds.n_t}x{ds.n_c} CSI, model expects {model.spec.n_t}x{model.spec.n_c}")
    if pl_stats is None:
        pl = sets["environment"].path_loss_db
        pl_stats = (float(np.mean(pl)), float(np.std(pl)) or 1.0)
    out = {t: _task_data(model.tasks[t], sets[model.tasks[t].modality], model.encoders, pl_stats) for t in TASK_ORDER}
    return out, pl_stats


# -- training -----------------------------------------------------------------

@dataclass
class TrainState:
    """Everything beyond the batch schedule that a resumed run needs."""

    step: int = 0
    adam_t: int = 0
    losses: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def push_loss(self, task_id: str, value: float):
        self.losses.append([task_id, value])
        del self.losses[:-LOSS_RING]


def save_state(path, run: RunConfig, state: TrainState, model: UniversalModel, opt: Adam):
    # the output location is not part of the training state
    run_fields = {k: v for k, v in asdict(run).items() if k != "out_dir"}
    header = {"run": run_fields, "step": state.step, "adam_t": opt.t, "losses": state.losses,
              "history": state.history, "rng": {"seed": run.seed, "scheme": "philox(seed, epoch, shuffle, task)"}}
    tensors = [(f"param:{p.name}", p.data) for p in opt.params]
    tensors += sorted(opt.state_arrays().items())
    ckpt.save(path, ckpt.MAGIC_STATE, header, tensors)


def load_state(path, run: RunConfig, model: UniversalModel, opt: Adam) -> TrainState:
    header, tensors = ckpt.load(path, ckpt.MAGIC_STATE, stage="train")
    saved = header["run"]
    if saved["config"] != run.config or saved["seed"] != run.seed:
        raise CheckpointError("train state belongs to a different run")
    for p in opt.params:
        key = f"param:{p.name}"
        if key not in tensors or tensors[key].shape != p.shape:
            raise CheckpointError(f"train state does not match the model at {p.name!r}")
        p.data = tensors[key].astype(p.dtype)
    opt.load_state_arrays(header["adam_t"], {k: v for k, v in tensors.items() if not k.startswith("param:")})
    return TrainState(header["step"], header["adam_t"], header["losses"], header["history"])


def epoch_schedule(seed: int, epoch: int, sizes: dict[str, int], batch: int) -> list[tuple[str, np.ndarray]]:
    """Round-robin over tasks of shuffled mini-batches; tasks with fewer batches drop out early."""
    per_task = {}
    for k, t in enumerate(TASK_ORDER):
        perm = rngmod.stream(seed, epoch, rngmod.SHUFFLE, k).permutation(sizes[t])
        per_task[t] = [perm[s : s + batch] for s in range(0, sizes[t], batch)]
    steps = []
    for b in range(max(len(v) for v in per_task.values())):
        for t in TASK_ORDER:
            if b < len(per_task[t]):
                steps.append((t, per_task[t][b]))
    return steps


class _Codes:
    """Encoder codes per task; frozen encoders are evaluated once and cached."""

    def __init__(self, model: UniversalModel, data: dict[str, TaskData]):
        self.model = model
        self.data = data
        trainable = model.trainable_groups()
        self.cache = {}
        for t, td in data.items():
            group = "cfenn" if td.spec.modality == "channel" else "epnn"
            if group not in trainable:
                self.cache[t] = model.codes(td.spec.modality, td.feats).data

    def __call__(self, task_id: str, idx=None) -> Tensor:
        if task_id in self.cache:
            c = self.cache[task_id]
            return Tensor(c if idx is None else c[idx])
        td = self.data[task_id]
        f = td.feats if idx is None else Tensor(td.feats.data[idx])
        return self.model.codes(td.spec.modality, f)


def build_model(run: RunConfig) -> UniversalModel:
    enc, _ = load_encoders(run.encoders_file)
    if run.config == "rl":
        ref, _ = load_backbone(run.backbone_file)
        bb = init_backbone(run.seed + 1, ref.cfg)  # same shape, never pretrained
        bb.freeze()
    else:
        bb, _ = load_backbone(run.backbone_file)
    spec = ModelSpec(run.config, enc.n_t, enc.n_c)
    return UniversalModel(spec, enc, bb, run.seed)


def predict(model: UniversalModel, task_id: str, codes: _Codes, chunk: int = 512) -> np.ndarray:
    n = len(codes.data[task_id])
    outs = []
    for s in range(0, n, chunk):
        idx = np.arange(s, min(n, s + chunk))
        outs.append(model.forward(task_id, codes(task_id, idx)).data)
    return np.concatenate(outs).astype(np.float64)


def evaluate_model(model: UniversalModel, data: dict[str, TaskData], config: str, seed: int) -> list[MetricReport]:
    codes = _Codes(model, data)
    return [evaluate_task(model.tasks[t], predict(model, t, codes), data[t].labels, config, seed) for t in TASK_ORDER]


@dataclass
class TrainResult:
    run: RunConfig
    reports: list
    history: list
    changed_groups: list
    expected_groups: list
    census: dict
    backbone_calls: int
    steps: int
    model: UniversalModel | None = None
    cpu_seconds: float = 0.0

    @property
    def census_ok(self) -> bool:
        return sorted(self.changed_groups) == sorted(self.expected_groups)


def train(run: RunConfig, resume=None, stop_at_step: int | None = None, state_path=None) -> TrainResult:
    """Train one configuration; writes checkpoints and CSVs to ``run.out_dir`` when set.

    ``stop_at_step`` ends the run after that many optimizer steps and saves
    the :class:`TrainState` to ``state_path``; ``resume`` loads one.
    """
    cpu0 = time.process_time()
    model = build_model(run)
    data, pl_stats = load_task_data(run.data_dir, model, "train", run.pooled)
    test, _ = load_task_data(run.data_dir, model, "test", run.pooled, pl_stats)
    before = model.group_hashes()
    opt = Adam(model.trainable_parameters(), lr=run.lr, betas=(run.beta1, run.beta2), eps=run.eps,
               weight_decay=run.weight_decay)
    state = TrainState()
    if resume is not None:
        state = load_state(resume, run, model, opt)
    model.backbone.calls = 0
    codes = _Codes(model, data)
    sizes = {t: len(d) for t, d in data.items()}
    per_epoch = len(epoch_schedule(run.seed, 0, sizes, run.batch_size))
    step = 0
    stopped = False
    for epoch in range(run.epochs):
        if (epoch + 1) * per_epoch <= state.step:
            step = (epoch + 1) * per_epoch
            continue
        for task_id, idx in epoch_schedule(run.seed, epoch, sizes, run.batch_size):
            if step < state.step:
                step += 1
                continue
            opt.zero_grad()
            pred = model.forward(task_id, codes(task_id, idx))
            loss = task_loss(model.tasks[task_id], pred, data[task_id].target[idx])
            loss.backward()
            opt.step()
            step += 1
            state.step = step
            state.push_loss(task_id, float(loss.data))
            if stop_at_step is not None and step >= stop_at_step:
                stopped = True
                break
        if stopped:
            break
        for r in evaluate_model(model, test, run.config, run.seed):
            state.history.append([epoch + 1, r.task_id, r.metric, r.value])
        log.info("%s epoch %d/%d: %s", run.config, epoch + 1, run.epochs,
                 ", ".join(f"{h[1]}={h[3]:.4f}" for h in state.history[-len(TASK_ORDER):]))

    if stopped:
        if state_path is None:
            raise ConfigError("stop_at_step needs a state_path to save to")
        save_state(state_path, run, state, model, opt)
        reports = []
    else:
        reports = evaluate_model(model, test, run.config, run.seed)

    after = model.group_hashes()
    changed = [g for g in GROUPS if before[g] != after[g]]
    present = model.groups()
    expected = [g for g in GROUPS if g in model.trainable_groups() and present[g]]
    calls = model.backbone.calls
    result = TrainResult(run, reports, state.history, changed, expected, model.census(), calls, state.step, model,
                         time.process_time() - cpu0)
    if not stopped:
        if not result.census_ok:
            log.error("freeze census mismatch for %s: changed %s, expected %s", run.config, changed, expected)
        if run.out_dir:
            write_outputs(Path(run.out_dir), result, pl_stats, routes=task_areas(run.data_dir, run.pooled))
            save_state(Path(run.out_dir) / "state.aims", run, state, model, opt)
    return result


def write_outputs(out: Path, result: TrainResult, pl_stats, routes):
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    extra = {"pl_mean": pl_stats[0], "pl_std": pl_stats[1], "pooled": result.run.pooled, "routes": routes,
             "epochs": result.run.epochs}
    model.save(out / "model.aimc", extra)
    if model.loras:
        model.save_loras(out / "lora.aiml")
    (out / "metrics.csv").write_text(metrics_csv(result.reports), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for e, t, m, v in result.history:
        w.writerow([e, t, m, _fmt(v)])
    (out / "history.csv").write_text(buf.getvalue(), encoding="utf-8")
    census = {"config": result.run.config, "trainable_counts": result.census, "changed": result.changed_groups,
              "expected": result.expected_groups, "ok": result.census_ok, "backbone_calls": result.backbone_calls}
    (out / "census.json").write_text(json.dumps(census, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v: float) -> str:
    return f"{v:.8g}"


def metrics_csv(reports, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow([r.config, r.task_id, r.metric, _fmt(r.value), r.n_samples, r.seed])
    return buf.getvalue()


def append_csv(path, reports) -> None:
    """Append rows, writing the header first if the file is new or empty."""
    p = Path(path)
    new = not p.is_file() or p.stat().st_size == 0
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("a", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(reports, header=new))


def evaluate(ckpt_path, data_dir, split: str = "test") -> list[MetricReport]:
    """All five metrics of a saved model on one split of ``data_dir``."""
    model, header = load_model(ckpt_path)
    try:
        pl_stats = (header["pl_mean"], header["pl_std"])
    except KeyError:
        raise CheckpointError("model checkpoint lacks path-loss standardisation") from None
    data, _ = load_task_data(data_dir, model, split, header.get("pooled", False), pl_stats)
    return evaluate_model(model, data, header["config"], header["seed"])


def ablate(seed: int, data_dir, csv_path=None, out_root=None, base: RunConfig | None = None,
           configs=CONFIGS, threads: int | None = None) -> list[TrainResult]:
    """Train every configuration with a shared seed and write one consolidated CSV.

    ``AIMM_THREADS`` (or ``threads``) caps how many runs execute at once;
    rows are written in the fixed configuration order either way.
    """
    base = base or RunConfig(data_dir=str(data_dir))
    if threads is None:
        threads = int(os.environ.get("AIMM_THREADS", "1") or 1)
    runs = []
    for c in configs:
        vals = asdict(base)
        vals.update(config=c, seed=seed, data_dir=str(data_dir),
                    out_dir=str(Path(out_root) / c) if out_root else None)
        runs.append(RunConfig(**vals))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(train, runs))
    else:
        results = [train(r) for r in runs]
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        Path(csv_path).write_text(metrics_csv([r for res in results for r in res.reports]), encoding="utf-8")
    return results
