"""Training loop, checkpoints and evaluation tables."""

import csv
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from desnet import datasim
from desnet.autodiff import Adam, checkpoint, clip_grad_norm
from desnet.losses import TrackLabel, pairwise_si_snr, pit_loss, si_snr, symphonic_loss_tensor
from desnet.model import DESNet, ModelConfig

CATEGORIES = ("non-dereverb", "dereverb")
ABLATIONS = ("staged_snr", "symphonic", "beam_feature", "wpe")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss; ``snapshot`` names the saved state."""

    def __init__(self, msg, snapshot=None):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    lr_decay: float = 0.5
    batch_size: int = 8
    chunks_per_epoch: int = 64
    validation_chunks: int = 64
    chunk_seconds: float = 1.0
    category: str = "non-dereverb"
    staged_snr: bool = True
    symphonic: bool = True
    beam_feature: bool = True
    wpe: bool = True  # only used by the dereverb category
    clip_norm: float = 5.0
    seed: int = 0
    workers: int = 1
    rir_id: str = "plane"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.category not in CATEGORIES:
            raise ValueError("category must be one of %s, got %r" % (CATEGORIES, self.category))
        if self.batch_size < 1 or self.chunks_per_epoch < 1:
            raise ValueError("batch_size and chunks_per_epoch must be >= 1")

    @property
    def dereverb(self):
        return self.category == "dereverb"

    def model_config(self):
        return replace(self.model, dereverb=self.dereverb and self.wpe, beam_feature=self.beam_feature)

    def schedule(self):
        if self.staged_snr:
            return datasim.StageSchedule()
        return datasim.StageSchedule.fixed(max(self.epochs, 20))

    def ablate(self, *names):
        bad = [n for n in names if n not in ABLATIONS]
        if bad:
            raise ValueError("unknown ablation(s) %s; choose from %s" % (bad, ABLATIONS))
        return replace(self, **{n: False for n in names})


# -- batching and the optimisation step -----------------------------------------------------

@dataclass
class Batch:
    mixtures: np.ndarray  # (B, M, L)
    targets: list  # per chunk (R, L)
    labels: list  # TrackLabel per chunk


def make_batch(results, dereverb):
    return Batch(np.stack([r.mixture.samples for r in results]),
                 [r.targets(dereverb) for r in results],
                 [r.track for r in results])


class Trainer:
    """Owns a model and its optimiser; one call to :meth:`step` is one update."""

    def __init__(self, model, lr=1e-3, clip_norm=5.0, symphonic=True):
        self.model = model
        self.params = model.parameters()
        self.opt = Adam(self.params, lr=lr)
        self.clip_norm = clip_norm
        self.symphonic = symphonic

    @property
    def lr(self):
        return self.opt.lr

    @lr.setter
    def lr(self, value):
        self.opt.lr = value

    def loss(self, batch):
        est = self.model(batch.mixtures)
        return symphonic_loss_tensor(est, batch.targets, batch.labels, self.symphonic)

    def step(self, batch):
        self.model.train()
        loss = self.loss(batch)
        value = loss.item()
        if not np.isfinite(value):
            return value
        self.params.zero_grad()
        loss.backward()
        if self.clip_norm:
            clip_grad_norm(self.params, self.clip_norm)
        self.opt.step()
        return value

    def validate(self, batches):
        was = self.model.training
        self.model.eval()
        try:
            return float(np.mean([self.loss(b).item() for b in batches]))
        finally:
            self.model.train(was)

    # -- checkpoints ----------------------------------------------------------------

    def save(self, prefix, **meta):
        arrays = checkpoint.module_arrays(self.model)
        arrays.update(self.opt.state_arrays())
        meta = dict(meta, lr=self.opt.lr, adam_steps=self.opt.step_count)
        checkpoint.save(prefix, arrays, meta)
        return prefix

    def load(self, prefix):
        arrays, meta = checkpoint.load(prefix)
        checkpoint.load_into_module(self.model, arrays)
        self.opt.load_state_arrays(arrays)
        self.opt.lr = meta["lr"]
        self.opt.step_count = meta["adam_steps"]
        return meta


def save_model(prefix, model, **meta):
    arrays = checkpoint.module_arrays(model)
    checkpoint.save(prefix, arrays, dict(meta, model=model_config_dict(model.cfg)))


def model_config_dict(cfg):
    d = asdict(cfg)
    d["pairs"] = [list(p) for p in cfg.pairs]
    return d


def model_config_from_dict(d):
    from desnet.unmix import DccrnConfig
    from desnet.wpe import WpeConfig
    d = dict(d)
    dc = dict(d.pop("dccrn"))
    for k in ("encoder_channels", "kernel", "stride"):
        dc[k] = tuple(dc[k])
    d["dccrn"] = DccrnConfig(**dc)
    d["wpe"] = WpeConfig(**d.pop("wpe"))
    d["pairs"] = tuple(tuple(p) for p in d["pairs"])
    return ModelConfig(**d)


def load_model(prefix, geometry=None):
    """Rebuild a :class:`DESNet` from any checkpoint written by this module."""
    arrays, meta = checkpoint.load(prefix)
    if "model" not in meta:
        raise ValueError("%s: checkpoint has no model configuration" % prefix)
    model = DESNet(model_config_from_dict(meta["model"]), geometry=geometry)
    checkpoint.load_into_module(model, arrays)
    model.eval()
    return model, meta


# -- the curriculum loop --------------------------------------------------------------

def _epoch_results(cfg, corpus, epoch):
    rng = np.random.default_rng([cfg.seed, epoch])
    draws = datasim.plan_epoch(epoch, cfg.schedule(), cfg.chunks_per_epoch, rng)
    specs = [datasim.draw_spec(d, corpus, rng, cfg.chunk_seconds, cfg.rir_id) for d in draws]
    return datasim.simulate_many(specs, corpus, cfg.workers)


def validation_batches(cfg, corpus):
    """Fixed validation chunks from a reserved seed, drawn from the final curriculum stage."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    sched = cfg.schedule()
    draws = datasim.plan_epoch(sched.num_epochs, sched, cfg.validation_chunks, rng)
    specs = [datasim.draw_spec(d, corpus, rng, cfg.chunk_seconds, cfg.rir_id) for d in draws]
    res = datasim.simulate_many(specs, corpus, cfg.workers)
    bs = cfg.batch_size
    return [make_batch(res[i:i + bs], cfg.dereverb) for i in range(0, len(res), bs)]


@dataclass
class TrainResult:
    trainer: Trainer
    losses: list
    val_losses: list
    checkpoints: list


def _append_csv(path, header, row):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        w.writerow(row)


def _fmt(x):
    return repr(float(x))


def train(cfg, corpus, out_dir=None, resume=None, max_steps=None, log=None):
    """Run the staged curriculum.

    ``out_dir`` receives ``metrics.csv`` (step, epoch, loss, lr),
    ``validation.csv`` and one checkpoint per epoch.  ``resume`` is a
    checkpoint prefix; ``max_steps`` stops early (and checkpoints) after that
    many optimiser steps in total, which makes interrupted runs resumable.
    """
    model = DESNet(cfg.model_config(), geometry=corpus.geometry, seed=cfg.seed)
    trainer = Trainer(model, cfg.lr, cfg.clip_norm, cfg.symphonic)
    epoch, batch_index, step, prev_val = 1, 0, 0, None
    if resume:
        meta = trainer.load(resume)
        epoch, batch_index, step, prev_val = meta["epoch"], meta["batch"], meta["step"], meta["prev_val"]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    val = validation_batches(cfg, corpus)
    losses, vals, ckpts = [], [], []
    nb = -(-cfg.chunks_per_epoch // cfg.batch_size)

    def snapshot(name):
        if not out_dir:
            return None
        prefix = os.path.join(out_dir, name)
        trainer.save(prefix, epoch=epoch, batch=batch_index, step=step, prev_val=prev_val,
                     model=model_config_dict(model.cfg))
        ckpts.append(prefix)
        return prefix

    while epoch <= cfg.epochs:
        results = _epoch_results(cfg, corpus, epoch)
        while batch_index < nb:
            if max_steps is not None and step >= max_steps:
                snapshot("step%06d" % step)
                return TrainResult(trainer, losses, vals, ckpts)
            chunk = results[batch_index * cfg.batch_size:(batch_index + 1) * cfg.batch_size]
            value = trainer.step(make_batch(chunk, cfg.dereverb))
            if not np.isfinite(value):
                snap = snapshot("nonfinite")
                raise NumericalError("non-finite loss %r at epoch %d step %d" % (value, epoch, step), snap)
            step += 1
            batch_index += 1
            losses.append(value)
            if out_dir:
                _append_csv(os.path.join(out_dir, "metrics.csv"), ("step", "epoch", "loss", "lr"),
                            (step, epoch, _fmt(value), _fmt(trainer.lr)))
            if log:
                log("epoch %d step %d loss %.4f" % (epoch, step, value))
        v = trainer.validate(val)
        vals.append(v)
        if prev_val is not None and v > prev_val:
            trainer.lr = trainer.lr * cfg.lr_decay
        prev_val = v
        if out_dir:
            _append_csv(os.path.join(out_dir, "validation.csv"), ("epoch", "val_loss", "lr"),
                        (epoch, _fmt(v), _fmt(trainer.lr)))
        if log:
            log("epoch %d validation %.4f lr %g" % (epoch, v, trainer.lr))
        epoch += 1
        batch_index = 0
        snapshot("epoch%02d" % (epoch - 1))
    return TrainResult(trainer, losses, vals, ckpts)


# -- evaluation -------------------------------------------------------------------------

@dataclass
class EvalItem:
    id: str
    mixture: np.ndarray  # (M, L)
    references: np.ndarray  # (R, L)
    track: TrackLabel
    condition: str = ""


def score(estimates, references, track):
    """Per-utterance SI-SNR: branch 0 for SE, PIT-aligned mean for two speakers."""
    refs = np.atleast_2d(references)
    if TrackLabel.parse(track) is TrackLabel.SE:
        return float(si_snr(estimates[0], refs[0]))
    return float(-pit_loss(estimates[:refs.shape[0]], refs)[0])


def mixture_score(mixture, references):
    """Baseline: channel-0 mixture against every reference, averaged."""
    refs = np.atleast_2d(references)
    return float(np.mean(pairwise_si_snr(mixture[:1], refs)))


@dataclass
class EvalTable:
    rows: list  # (id, track, condition, si_snr, mixture_si_snr)

    def summary(self):
        """Mean SI-SNR per (track, condition), plus a per-track average."""
        groups = {}
        for _, track, cond, s, m in self.rows:
            groups.setdefault((track, cond), []).append((s, m))
            groups.setdefault((track, "avg"), []).append((s, m))
        out = []
        for (track, cond), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] == "avg", kv[0][1])):
            v = np.array(vals)
            out.append((track, cond, len(vals), float(v[:, 0].mean()), float(v[:, 1].mean())))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("id", "track", "condition", "si_snr", "mixture_si_snr"))
            for r in self.rows:
                w.writerow(r[:3] + tuple(_fmt(x) for x in r[3:]))

    def text(self):
        lines = ["%-5s %-10s %5s %10s %10s" % ("track", "condition", "n", "model", "mixture")]
        for track, cond, n, s, m in self.summary():
            lines.append("%-5s %-10s %5d %10.2f %10.2f" % (track, cond, n, s, m))
        return "\n".join(lines)


def evaluate(separate, items):
    """Score ``separate(mixture) -> (C, L)`` on every :class:`EvalItem`."""
    rows = []
    for it in items:
        if it.references is None or len(it.references) == 0:
            raise ValueError("item %r has no references" % it.id)
        est = np.asarray(separate(it.mixture))
        track = TrackLabel.parse(it.track)
        rows.append((it.id, track.value, it.condition, score(est, it.references, track),
                     mixture_score(it.mixture, it.references)))
    return EvalTable(rows)


def evaluate_checkpoint(prefix, items, geometry=None):
    model, _ = load_model(prefix, geometry)
    return evaluate(model.separate, items)
