"""Training: sampled insertion targets, slot KL loss, Noam-scheduled Adam."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .corpus import Example, Vocabulary
from .model import InsertionParser, ModelConfig, pad_batch
from .oracle import (
    DomainError, Weighting, align, build_slot_distribution, candidates_from_positions, sample_subsequence,
)
from .parse_ir import Kind

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


ALIGNMENTS = ("leftmost", "sampled")


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_steps: int = 10000
    warmup_steps: int = 500
    lr_factor: float = 0.15
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    weighting: str = "tree:1.0"
    input_src_training: bool = False
    alignment: str = "leftmost"
    freeze_encoder_embeddings: bool = False
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if not self.lr_factor > 0:
            raise ValueError("lr_factor must be positive")
        Weighting.parse(self.weighting)
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse a flat ``key=value`` file; ``#`` starts a comment."""
        defaults = cls()
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not hasattr(defaults, key):
                raise ValueError(f"bad config line {line!r}")
            current = getattr(defaults, key)
            if isinstance(current, bool):
                values[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = type(current)(raw)
        return cls(**values)


def noam_lr(step: int, d_model: int, warmup: int, factor: float) -> float:
    if step < 1:
        raise DomainError("step counts from 1")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def lr(step: int, cfg: TrainConfig, d_dec: int) -> float:
    return noam_lr(step, d_dec, cfg.warmup_steps, cfg.lr_factor)


# -- losses ---------------------------------------------------------------------

def slot_loss(pred, gold) -> torch.Tensor:
    """KL(gold || pred) for one slot; both are probability rows over the same ids."""
    pred = torch.as_tensor(pred, dtype=torch.float64)
    gold = torch.as_tensor(gold, dtype=torch.float64)
    return (torch.xlogy(gold, gold) - torch.xlogy(gold, pred)).sum()


def sequence_loss(slot_losses) -> torch.Tensor:
    losses = torch.as_tensor(slot_losses, dtype=torch.float64) if not torch.is_tensor(slot_losses) else slot_losses
    if losses.numel() == 0:
        raise ValueError("need at least one slot")
    return losses.mean()


def batch_loss(log_probs: torch.Tensor, gold: torch.Tensor, slot_mask: torch.Tensor) -> torch.Tensor:
    """Mean over examples of the mean slot KL; padded slots are ignored."""
    kl = (torch.xlogy(gold, gold) - gold * log_probs).sum(-1)
    kl = kl * slot_mask
    per_example = kl.sum(1) / slot_mask.sum(1)
    return per_example.mean()


# -- batches --------------------------------------------------------------------

@dataclass
class Batch:
    src_ids: torch.Tensor
    src_mask: torch.Tensor
    hyp_ids: torch.Tensor
    hyp_mask: torch.Tensor
    gold: torch.Tensor       # (B, T-1, V+M)
    slot_mask: torch.Tensor  # (B, T-1)
    hyps: list

    def inputs(self):
        return self.src_ids, self.src_mask, self.hyp_ids, self.hyp_mask


def make_batch(examples: Sequence[Example], vocab: Vocabulary, weighting: Weighting, rng: np.random.Generator,
               input_src_training: bool = False, translate: dict | None = None,
               alignment: str = "leftmost") -> Batch:
    """Sample one partial hypothesis per example and its per-slot gold distributions.

    A hypothesis holding a repeated token (usually ``]``) embeds in the target
    in several ways.  With ``alignment="leftmost"`` the slot candidates come
    from the leftmost embedding, so the gold is a function of what the model
    sees.  ``"sampled"`` keeps the positions that were actually drawn.
    """
    src, hyps, dists = [], [], []
    for ex in examples:
        words = ex.query.tokens if not translate else [translate.get(w, w) for w in ex.query.tokens]
        keep = [p for p, t in enumerate(ex.target) if t.kind is Kind.POINTER] if input_src_training else ()
        hyp, cands = sample_subsequence(ex.target, rng, keep=keep)
        if alignment == "leftmost":
            cands = candidates_from_positions(ex.target, align(hyp.tokens, ex.target))
        src.append(vocab.source_ids(words))
        hyps.append(hyp)
        dists.append([build_slot_distribution(c, weighting, vocab) for c in cands])
    hyp_ids = [[vocab.joint_id(t) for t in h.tokens] for h in hyps]
    src_ids, src_mask, hyp_t, hyp_mask = pad_batch(src, hyp_ids, vocab.pad_id)
    B, T = hyp_t.shape
    gold = torch.zeros(B, T - 1, vocab.V + src_ids.shape[1])
    slot_mask = torch.zeros(B, T - 1)
    for b, per_slot in enumerate(dists):
        for l, dist in enumerate(per_slot):
            slot_mask[b, l] = 1.0
            for j, p in dist.items():
                gold[b, l, j] = p
    return Batch(src_ids, src_mask, hyp_t, hyp_mask, gold, slot_mask, hyps)


# -- fitting -----------------------------------------------------------------------

def build_model(vocab: Vocabulary, cfg: ModelConfig) -> InsertionParser:
    return InsertionParser(cfg, len(vocab.source_words), vocab.V)


def fit(model: InsertionParser, train: Sequence[Example], vocab: Vocabulary, cfg: TrainConfig,
        dev: Sequence[Example] | None = None, metrics_path=None, checkpoint_path=None,
        dev_decode=None, callback: Callable | None = None) -> Checkpoint:
    """Train ``model`` in place and return the final checkpoint.

    ``metrics_path`` receives one JSON line per logged step.  When ``dev`` is
    given, exact match on it is computed at ``eval_every`` and at the end.
    """
    from .decoding import DecodeConfig, ModelScorer, evaluate

    weighting = Weighting.parse(cfg.weighting)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    if cfg.freeze_encoder_embeddings:
        model.freeze_source_embeddings()
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=0.0, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    dev_cfg = dev_decode or DecodeConfig(mode="input_src" if cfg.input_src_training else "scratch")
    metrics_file = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    history = []
    order: list[int] = []
    dev_em = None
    t0 = time.time()

    def run_dev():
        report = evaluate(ModelScorer(model, vocab), dev, dev_cfg)
        model.train()
        return report["em"]

    try:
        model.train()
        for step in range(1, cfg.max_steps + 1):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(train)).tolist())
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            batch = make_batch([train[i] for i in idx], vocab, weighting, rng, cfg.input_src_training,
                               alignment=cfg.alignment)
            rate = lr(step, cfg, model.cfg.d_dec)
            for group in opt.param_groups:
                group["lr"] = rate
            loss = batch_loss(model(*batch.inputs()), batch.gold, batch.slot_mask)
            if not torch.isfinite(loss):
                raise DivergenceError(f"loss is {loss.item()} at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
            opt.step()
            history.append(loss.item())

            if dev and cfg.eval_every and step % cfg.eval_every == 0:
                dev_em = run_dev()
            if step % cfg.log_every == 0 or step == 1 or step == cfg.max_steps:
                record = {"step": step, "loss": float(np.mean(history[-cfg.log_every:])), "lr": rate,
                          "dev_em": dev_em}
                logger.info("step %d loss %.4f lr %.2e dev_em %s (%.0fs)", step, record["loss"], rate,
                            dev_em, time.time() - t0)
                if metrics_file:
                    metrics_file.write(json.dumps(record) + "\n")
                    metrics_file.flush()
                if callback:
                    callback(record)
            if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                Checkpoint.from_model(model, vocab, cfg.to_dict(), step,
                                      {"loss": history[-1], "dev_em": dev_em}).save(checkpoint_path)
        if dev:
            dev_em = run_dev()
    finally:
        if metrics_file:
            metrics_file.close()
    model.eval()
    ckpt = Checkpoint.from_model(model, vocab, cfg.to_dict(), cfg.max_steps,
                                 {"loss": history[-1] if history else None, "dev_em": dev_em,
                                  "loss_history": history})
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return ckpt


# -- gradient checking ---------------------------------------------------------------

def gradcheck(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], epsilon: float = 1e-6,
              samples_per_param: int | None = None, rng: np.random.Generator | None = None,
              floor: float = 1e-6) -> float:
    """Max relative error between autograd and central finite differences.

    ``params`` should be float64 leaf tensors.  With ``samples_per_param``
    only that many random coordinates of each tensor are probed.  The
    relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for p in params:
            analytic = (p.grad if p.grad is not None else torch.zeros_like(p)).detach().clone().reshape(-1)
            flat = p.view(-1)
            coords = range(flat.numel())
            if samples_per_param is not None and flat.numel() > samples_per_param:
                coords = rng.choice(flat.numel(), samples_per_param, replace=False)
            for c in coords:
                c = int(c)
                orig = flat[c].item()
                flat[c] = orig + epsilon
                up = loss_fn().item()
                flat[c] = orig - epsilon
                down = loss_fn().item()
                flat[c] = orig
                numeric = (up - down) / (2 * epsilon)
                a = analytic[c].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst


def gradcheck_model(seed: int = 0, d: int = 8, epsilon: float = 1e-5, samples_per_param: int = 6,
                    copy_enabled: bool = True) -> float:
    """Finite-difference check of the whole loss stack on a tiny random model."""
    if d > 16:
        raise DomainError("keep d <= 16 for the finite-difference check")
    g = np.random.default_rng(seed)
    cfg = ModelConfig(d_enc=d, d_dec=d, enc_layers=1, dec_layers=2, heads=2, ffn_mult=2, dropout=0.0,
                      copy_enabled=copy_enabled, max_len=16, seed=seed)
    n_source, n_tags, B, M, T = 12, 9, 3, 5, 6
    model = InsertionParser(cfg, n_source, n_tags).double()
    model.train()
    src = [g.integers(2, n_source, size=g.integers(2, M + 1)).tolist() for _ in range(B)]
    hyps = []
    for s in src:
        t = int(g.integers(2, T + 1))
        body = [int(g.integers(5, n_tags)) if g.random() < 0.5 else n_tags + int(g.integers(0, len(s)))
                for _ in range(t - 2)]
        hyps.append([2, *body, 3])
    src_ids, src_mask, hyp_ids, hyp_mask = pad_batch(src, hyps, 0)
    slot_mask = (hyp_mask[:, 1:] & hyp_mask[:, :-1]).double()
    gold = torch.from_numpy(g.dirichlet(np.ones(n_tags + src_ids.shape[1]), size=(B, hyp_ids.shape[1] - 1)))
    gold = gold * torch.cat([torch.ones(B, n_tags, dtype=torch.bool),
                             src_mask], 1)[:, None, :]
    gold = gold / gold.sum(-1, keepdim=True)

    def loss_fn():
        return batch_loss(model(src_ids, src_mask, hyp_ids, hyp_mask), gold, slot_mask)

    params = [p for p in model.parameters() if p.requires_grad]
    return gradcheck(loss_fn, params, epsilon, samples_per_param, g)
