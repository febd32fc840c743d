"""Training orchestration.

Runs per-task training with either the standard every-epoch rehearsal
protocol or the alternating schedule: learning epochs train on stream plus
replay with the buffer frozen, forgetting epochs train on the stream only,
update the buffer through gated insertion plus score-based replacement,
and restore the model checkpoint taken at the epoch start so only
learning-epoch updates persist.
"""

import warnings
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import buffer as buffer_mod
from .buffer import (MemoryBuffer, gdumb_update, insertion_candidates,
                     replace_with_candidates, reservoir_update)
from .config import config_hash
from .consolidation import buffer_fit, consolidate
from .errors import ConfigError, InputError, NumericalError
from .metrics import AccuracyMatrix, faa, final_forgetting, separation_trace
from .mlp import MLP, ce_gradient, per_sample_ce, restore_checkpoint, save_checkpoint
from .stream import (Batch, NoiseSpec, default_superclass_pairs, inject_noise,
                     load_csv, make_synthetic, split_tasks, split_train_test,
                     standardize)


@dataclass(frozen=True)
class MethodSpec:
    """Feature flags that compose a training method.

    ``ace`` masks the stream loss to current-task classes and the replay
    loss to all seen classes; ``alpha_gate`` keeps only the lowest-loss
    slice of each batch as insertion candidates; ``alternate`` enables the
    learning/forgetting schedule with checkpointing; ``selector`` picks how
    victims are chosen once the buffer is full.
    """
    label: str
    uses_buffer: bool = True
    ace: bool = False
    alpha_gate: bool = False
    alternate: bool = False
    selector: str = "reservoir"
    joint: bool = False
    gdumb: bool = False


PRESETS = {
    "finetune": MethodSpec("finetune", uses_buffer=False),
    "joint": MethodSpec("joint", uses_buffer=False, joint=True),
    "er": MethodSpec("er"),
    "er_ace": MethodSpec("er_ace", ace=True),
    "gdumb": MethodSpec("gdumb", gdumb=True),
    "aer_abs": MethodSpec("aer_abs", ace=True, alpha_gate=True, alternate=True,
                          selector="abs"),
    "aer_lass": MethodSpec("aer_lass", ace=True, alpha_gate=True, alternate=True,
                           selector="lass"),
    "er_ace_abs": MethodSpec("er_ace_abs", ace=True, alpha_gate=True,
                             selector="abs"),
}


def resolve_method(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown method {name!r}; known: {', '.join(PRESETS)}")
    return PRESETS[name]


@dataclass(frozen=True)
class EpochSchedule:
    """Strictly alternating learning/forgetting modes, learning first."""
    modes: tuple
    insert_during_learning: bool = False


def alternation_schedule(epochs):
    """Learning first, then strict alternation.

    A single epoch cannot alternate; it degenerates to one learning epoch
    with insertions enabled (warned).
    """
    if epochs < 1:
        raise InputError(f"epochs must be >= 1, got {epochs}")
    if epochs == 1:
        warnings.warn("single-epoch task: alternation impossible, "
                      "running one learning epoch with buffer updates enabled")
        return EpochSchedule(("learning",), insert_during_learning=True)
    modes = tuple("learning" if e % 2 == 0 else "forgetting" for e in range(epochs))
    return EpochSchedule(modes)


def replay_batch(buffer, k, rng):
    """Uniform draw of k entries; with replacement only when the buffer is
    smaller than k. An empty buffer yields an empty batch."""
    size = len(buffer)
    if size == 0:
        return Batch(np.zeros((0, buffer.dim)), np.zeros(0, dtype=np.intp),
                     np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp))
    sel = rng.choice(size, size=k, replace=size < k)
    return Batch(buffer.features[sel].copy(), buffer.labels[sel].copy(),
                 buffer.true_labels[sel].copy(), buffer.task_ids[sel].copy())


@dataclass
class RunRecord:
    """Per-run traces, the accuracy matrix and final buffer statistics."""
    method_label: str
    seed: int
    config_key: str
    traces: list = field(default_factory=list)
    matrix: AccuracyMatrix = None
    final_purity: float = None
    final_diversity: float = None
    consolidation_reports: list = field(default_factory=list)
    noise_report: dict = None
    checkpoint_checks: int = 0
    buffer_hash_checks: int = 0

    def faa(self):
        return faa(self.matrix)

    def ff(self):
        if self.matrix.num_tasks < 2:
            return None
        return final_forgetting(self.matrix)


def prepare_data(cfg, run_seed):
    """Build the noisy train stream and clean per-task test splits.

    The dataset and the frozen noise depend only on the dataset/noise
    seeds; the run seed controls batch order, so runs with different seeds
    pair up on identical data.
    """
    if cfg.dataset_kind == "csv":
        base = load_csv(cfg.dataset_path)
        if base.num_classes % cfg.tasks:
            raise ConfigError(
                f"dataset.tasks: {base.num_classes} classes not divisible by "
                f"{cfg.tasks} tasks")
    else:
        base = make_synthetic(cfg.classes, cfg.dims, cfg.per_class,
                              cfg.cluster_spread, cfg.dataset_seed)
    train, test = split_train_test(base, cfg.test_fraction, cfg.dataset_seed)
    if cfg.dataset_kind == "csv" and cfg.standardize_features:
        train, test = standardize(train, test)
    stream = split_tasks(train, cfg.tasks, run_seed, cfg.epochs_per_task,
                         cfg.batch_size)
    noise_report = None
    if cfg.noise_rate > 0:
        if cfg.noise_kind == "asymmetric":
            if cfg.superclass_spec:
                from .config import parse_superclasses
                superclasses = parse_superclasses(cfg.superclass_spec,
                                                  train.num_classes)
            else:
                superclasses = default_superclass_pairs(train.num_classes)
        else:
            superclasses = None
        spec = NoiseSpec(cfg.noise_kind, cfg.noise_rate, superclasses,
                         cfg.noise_seed)
        noise_report = inject_noise(train, spec, stream.class_groups)
    test_sets = []
    for g in stream.class_groups:
        mask = np.isin(test.labels_true, g)
        test_sets.append((test.features[mask], test.labels_true[mask]))
    return SimpleNamespace(train=train, test=test, stream=stream,
                           test_sets=test_sets, noise_report=noise_report)


def _accuracy(model, features, labels):
    if len(features) == 0:
        raise InputError("empty test split")
    return float((model.predict(features) == labels).mean())


def train_task(model, stream, buffer, cfg, spec, t, rngs):
    """One task of training; returns (traces, checkpoint_checks, hash_checks).

    Checkpoint neutrality (forgetting epochs end where they started,
    bitwise) and buffer immutability across learning epochs are asserted
    in-run on every epoch of an alternating schedule.
    """
    task_classes = stream.task_classes(t)
    model.seen_classes.update(task_classes)
    seen_sorted = tuple(sorted(model.seen_classes))
    epochs = cfg.epochs_per_task
    if spec.alternate:
        schedule = alternation_schedule(epochs)
        modes = schedule.modes
        insert_in_learning = schedule.insert_during_learning
    else:
        modes = ("learning",) * epochs
        insert_in_learning = spec.uses_buffer
    traces = []
    ckpt_checks = 0
    hash_checks = 0
    for e, mode in enumerate(modes):
        forgetting = mode == "forgetting"
        if forgetting:
            ckpt = save_checkpoint(model, epoch=e)
        elif spec.alternate and not insert_in_learning:
            pre_hash = buffer.content_hash()
        loss_sum, loss_count = 0.0, 0
        for batch in stream.batches(t, e):
            inserting = spec.uses_buffer and (forgetting or insert_in_learning)
            if (inserting and spec.selector in ("lass", "abs")
                    and not spec.gdumb and len(buffer)):
                buffer.refresh_losses(model)
            losses = None
            if not spec.gdumb:
                smask = task_classes if spec.ace else None
                logits, cache = model.forward(batch.features, cache=True)
                losses = per_sample_ce(logits, batch.labels, smask)
                grads = model.backward(cache,
                                       ce_gradient(logits, batch.labels, smask))
                if not forgetting and spec.uses_buffer and len(buffer):
                    replay = replay_batch(buffer, cfg.batch_size, rngs.replay)
                    rmask = seen_sorted if spec.ace else None
                    rlogits, rcache = model.forward(replay.features, cache=True)
                    rgrads = model.backward(
                        rcache, ce_gradient(rlogits, replay.labels, rmask))
                    grads = [a + b for a, b in zip(grads, rgrads)]
                model.apply_step(grads)
                loss_sum += float(losses.sum())
                loss_count += len(losses)
            if inserting:
                if spec.gdumb:
                    for i in range(len(batch)):
                        gdumb_update(buffer, batch.features[i], batch.labels[i],
                                     batch.true_labels[i], t, rngs.buffer)
                else:
                    if spec.alpha_gate:
                        cand = insertion_candidates(losses, cfg.alpha)
                    else:
                        cand = np.arange(len(batch))
                    if len(cand):
                        if spec.selector == "reservoir":
                            for i in cand:
                                reservoir_update(
                                    buffer, batch.features[i], batch.labels[i],
                                    batch.true_labels[i], t, losses[i],
                                    rngs.buffer)
                        else:
                            replace_with_candidates(
                                buffer, batch.features[cand], batch.labels[cand],
                                batch.true_labels[cand],
                                np.full(len(cand), t, dtype=np.intp),
                                losses[cand], spec.selector, t, rngs.buffer)
        trace = {"task": t, "epoch": e, "mode": mode,
                 "stream_loss": loss_sum / loss_count if loss_count else None,
                 "buffer_clean_loss": None, "buffer_noisy_loss": None,
                 "buffer_purity": None}
        if spec.uses_buffer and len(buffer):
            clean_mean, noisy_mean = separation_trace(buffer, model)
            trace["buffer_clean_loss"] = clean_mean
            trace["buffer_noisy_loss"] = noisy_mean
            trace["buffer_purity"] = buffer_mod.purity(buffer)[0]
        traces.append(trace)
        if forgetting:
            restore_checkpoint(model, ckpt)
            if save_checkpoint(model, epoch=e).data != ckpt.data:
                raise NumericalError(
                    f"checkpoint neutrality violated in task {t} epoch {e}")
            ckpt_checks += 1
        elif spec.alternate and not insert_in_learning:
            if buffer.content_hash() != pre_hash:
                raise NumericalError(
                    f"buffer mutated during learning epoch {e} of task {t}")
            hash_checks += 1
    return traces, ckpt_checks, hash_checks


def _dump_state(model, buffer, out_dir, seed, context):
    import json
    from pathlib import Path
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    dump = path / f"abort_state_seed{seed}"
    dump.mkdir(exist_ok=True)
    (dump / "model.ckpt").write_bytes(save_checkpoint(model).data)
    if buffer is not None and len(buffer):
        buffer.dump_jsonl(dump / "buffer.jsonl")
    (dump / "context.json").write_text(json.dumps(context, sort_keys=True))
    return dump


def run_single(cfg, seed, spec=None, reference_model=None, on_task_end=None,
               dump_dir=None):
    """Execute one seeded run of the configured method; returns a RunRecord."""
    spec = spec or resolve_method(cfg.method)
    if cfg.consolidation != "none" and (not spec.uses_buffer or spec.gdumb):
        raise ConfigError(
            f"run.consolidation: {spec.label} has no rehearsal buffer to consolidate")
    data = prepare_data(cfg, seed)
    record = RunRecord(method_label=spec.label, seed=seed,
                       config_key=f"{config_hash(cfg, include_seeds=False)}:{spec.label}",
                       noise_report=data.noise_report)
    rngs = SimpleNamespace(replay=np.random.default_rng([seed, 21]),
                           buffer=np.random.default_rng([seed, 22]),
                           consolidation=np.random.default_rng([seed, 23]))
    model = MLP(data.train.dim, data.train.num_classes, cfg.hidden, cfg.lr,
                cfg.momentum, seed=[seed, 20])
    t_count = cfg.tasks

    if spec.joint:
        merged = split_tasks(data.train, 1, seed, cfg.epochs_per_task,
                             cfg.batch_size)
        plain = PRESETS["finetune"]
        traces, _, _ = train_task(model, merged, None, cfg, plain, 0, rngs)
        record.traces = traces
        record.matrix = AccuracyMatrix(t_count)
        per_task = [_accuracy(model, x, y) for x, y in data.test_sets]
        for j in range(t_count):
            for t in range(j, t_count):
                record.matrix.set_entry(j, t, per_task[j])
        record.traces[-1]["accuracy_row"] = per_task
        if on_task_end is not None:
            on_task_end(t_count - 1, model, None)
        return record

    buffer = MemoryBuffer(cfg.buffer_capacity, data.train.dim) if spec.uses_buffer else None
    record.matrix = AccuracyMatrix(t_count)
    for t in range(t_count):
        try:
            traces, ckpts, hashes = train_task(model, data.stream, buffer, cfg,
                                               spec, t, rngs)
            record.traces.extend(traces)
            record.checkpoint_checks += ckpts
            record.buffer_hash_checks += hashes
            if cfg.consolidation != "none" and len(buffer):
                report = consolidate(model, buffer, cfg, rngs.consolidation)
                report["task"] = t
                record.consolidation_reports.append(report)
            eval_model = model
            if spec.gdumb:
                eval_model = MLP(data.train.dim, data.train.num_classes,
                                 cfg.hidden, cfg.gdumb_fit_lr, cfg.momentum,
                                 seed=[seed, 24, t])
                eval_model.seen_classes.update(model.seen_classes)
                buffer_fit(eval_model, buffer, cfg.gdumb_fit_epochs,
                           cfg.gdumb_fit_lr, rng=rngs.consolidation)
            row = [_accuracy(eval_model, *data.test_sets[j]) for j in range(t + 1)]
        except NumericalError as exc:
            if dump_dir is not None:
                dump = _dump_state(model, buffer, dump_dir, seed,
                                   {"task": t, "seed": seed, "error": str(exc)})
                raise NumericalError(f"{exc} (state dump at {dump})") from exc
            raise
        for j, acc in enumerate(row):
            record.matrix.set_entry(j, t, acc)
        record.traces[-1]["accuracy_row"] = row
        if on_task_end is not None:
            on_task_end(t, eval_model, buffer)
    if spec.uses_buffer and len(buffer):
        record.final_purity = buffer_mod.purity(buffer)[0]
        if reference_model is not None:
            record.final_diversity = buffer_mod.diversity(buffer, reference_model)[0]
    return record


def train_reference(cfg):
    """Train the clean joint reference model used by the diversity metric."""
    if cfg.dataset_kind == "csv":
        base = load_csv(cfg.dataset_path)
    else:
        base = make_synthetic(cfg.classes, cfg.dims, cfg.per_class,
                              cfg.cluster_spread, cfg.dataset_seed)
    train, test = split_train_test(base, cfg.test_fraction, cfg.dataset_seed)
    if cfg.dataset_kind == "csv" and cfg.standardize_features:
        train, test = standardize(train, test)
    merged = split_tasks(train, 1, cfg.dataset_seed, cfg.epochs_per_task,
                         cfg.batch_size)
    model = MLP(train.dim, train.num_classes, cfg.hidden, cfg.lr, cfg.momentum,
                seed=[cfg.dataset_seed, 927])
    rngs = SimpleNamespace(replay=np.random.default_rng([cfg.dataset_seed, 31]),
                           buffer=np.random.default_rng([cfg.dataset_seed, 32]),
                           consolidation=np.random.default_rng([cfg.dataset_seed, 33]))
    train_task(model, merged, None, cfg, PRESETS["finetune"], 0, rngs)
    return model


def run_seeds(cfg, spec=None, reference_model=None, on_task_end_factory=None,
              dump_dir=None):
    """Run every configured seed sequentially; returns the records."""
    records = []
    for seed in cfg.seeds:
        hook = on_task_end_factory(seed) if on_task_end_factory else None
        records.append(run_single(cfg, seed, spec=spec,
                                  reference_model=reference_model,
                                  on_task_end=hook, dump_dir=dump_dir))
    return records
