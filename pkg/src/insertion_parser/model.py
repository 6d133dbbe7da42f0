"""Encoder / insertion-decoder network with pointer and copy heads.

Shapes follow ``(batch, length, features)``.  Hypotheses are given as joint
ids: values below ``V`` are tag-vocabulary ids and ``V + i`` points at source
position ``i``.  The output for every insertion slot is a log-distribution
over ``V`` tags followed by the ``M`` (padded) source positions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .oracle import DomainError

NEG_INF = -1e9


class LengthError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_enc: int = 128
    d_dec: int = 128
    enc_layers: int = 2
    dec_layers: int = 4
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    copy_enabled: bool = True
    labeled_close: bool = False
    max_len: int = 128
    seed: int = 0
    # add decoder positions to copied encoder rows as well as to tag rows
    pointer_positions: bool = True
    # width of the pointer attention projections, defaults to d_dec
    d_ptr: int | None = None

    def __post_init__(self):
        if self.dec_layers < 1:
            raise ValueError("dec_layers must be >= 1")
        if self.d_dec % self.heads or self.d_enc % self.heads:
            raise ValueError("heads must divide d_enc and d_dec")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def sinusoid_table(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.float()


def scaled_dot_scores(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """``q k^T / sqrt(h)`` with ``h`` the (shared) projected width."""
    return q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])


def joint_log_probs(tag_logits: torch.Tensor, ptr_scores: torch.Tensor,
                    src_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Log-softmax over ``[tag logits | pointer scores]`` per slot."""
    if src_mask is not None:
        ptr_scores = ptr_scores.masked_fill(~src_mask[:, None, :], NEG_INF)
    return F.log_softmax(torch.cat([tag_logits, ptr_scores], dim=-1), dim=-1)


def joint_distribution(tag_logits, ptr_scores, src_mask=None) -> torch.Tensor:
    return joint_log_probs(tag_logits, ptr_scores, src_mask).exp()


class InsertionParser(nn.Module):
    def __init__(self, cfg: ModelConfig, n_source: int, n_tags: int):
        super().__init__()
        self.cfg = cfg
        self.n_source = n_source
        self.n_tags = n_tags
        d_ptr = cfg.d_ptr or cfg.d_dec
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.src_embed = nn.Embedding(n_source, cfg.d_enc, padding_idx=0)
            self.encoder = nn.TransformerEncoder(
                nn.TransformerEncoderLayer(cfg.d_enc, cfg.heads, cfg.ffn_mult * cfg.d_enc, cfg.dropout,
                                           activation="gelu", batch_first=True, norm_first=True),
                cfg.enc_layers, norm=nn.LayerNorm(cfg.d_enc), enable_nested_tensor=False)
            self.tag_embed = nn.Embedding(n_tags, cfg.d_dec)
            self.ptr_embed = nn.Embedding(cfg.max_len, cfg.d_dec)
            self.copy_proj = nn.Linear(cfg.d_enc, cfg.d_dec, bias=False)
            self.decoder = nn.TransformerDecoder(
                nn.TransformerDecoderLayer(cfg.d_dec, cfg.heads, cfg.ffn_mult * cfg.d_dec, cfg.dropout,
                                           activation="gelu", batch_first=True, norm_first=True),
                cfg.dec_layers, norm=nn.LayerNorm(cfg.d_dec))
            self.slot_proj = nn.Linear(2 * cfg.d_dec, cfg.d_dec, bias=False)
            self.tag_head = nn.Linear(cfg.d_dec, n_tags)
            self.q_proj = nn.Linear(cfg.d_dec, d_ptr)
            self.k_proj = nn.Linear(cfg.d_enc, d_ptr)
        with torch.no_grad():
            self.copy_proj.weight.copy_(torch.eye(cfg.d_dec, cfg.d_enc))
        self.register_buffer("enc_pos", sinusoid_table(cfg.max_len, cfg.d_enc), persistent=False)
        self.register_buffer("dec_pos", sinusoid_table(cfg.max_len, cfg.d_dec), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)

    # -- pieces ---------------------------------------------------------------

    def encode(self, src_ids: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        M = src_ids.shape[1]
        if M > self.cfg.max_len:
            raise LengthError(f"source length {M} exceeds max_len {self.cfg.max_len}")
        x = self.drop(self.src_embed(src_ids) + self.enc_pos[:M])
        return self.encoder(x, src_key_padding_mask=~src_mask)

    def embed_hypothesis(self, hyp_ids: torch.Tensor, enc: torch.Tensor,
                         src_mask: torch.Tensor | None = None) -> torch.Tensor:
        V, T = self.n_tags, hyp_ids.shape[1]
        if T > self.cfg.max_len:
            raise LengthError(f"hypothesis length {T} exceeds max_len {self.cfg.max_len}")
        is_ptr = hyp_ids >= V
        idx = torch.where(is_ptr, hyp_ids - V, torch.zeros_like(hyp_ids))
        m = enc.shape[1] if src_mask is None else src_mask.sum(1, keepdim=True)
        if bool((is_ptr & (idx >= m)).any()):
            raise IndexError("pointer index beyond the source length")
        tags = self.tag_embed(torch.where(is_ptr, torch.zeros_like(hyp_ids), hyp_ids))
        if self.cfg.copy_enabled:
            picked = enc.gather(1, idx[..., None].expand(-1, -1, enc.shape[-1]))
            ptrs = self.copy_proj(picked)
        else:
            ptrs = self.ptr_embed(idx)
        x = torch.where(is_ptr[..., None], ptrs, tags)
        pe = self.dec_pos[:T].expand_as(x)
        if not self.cfg.pointer_positions:
            pe = pe * (~is_ptr[..., None]).to(pe.dtype)
        return x + pe

    def decode_states(self, x: torch.Tensor, enc: torch.Tensor, hyp_mask: torch.Tensor | None = None,
                      src_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Bidirectional self-attention over the hypothesis plus cross-attention (no causal mask)."""
        return self.decoder(
            self.drop(x), enc,
            tgt_key_padding_mask=None if hyp_mask is None else ~hyp_mask,
            memory_key_padding_mask=None if src_mask is None else ~src_mask,
        )

    def pool_slots(self, r: torch.Tensor) -> torch.Tensor:
        """Slot ``l`` sees ``concat(r[l+1], r[l])`` through ``W_s``."""
        if r.shape[1] < 2:
            raise DomainError("need at least two hypothesis tokens to form a slot")
        return self.slot_proj(torch.cat([r[:, 1:], r[:, :-1]], dim=-1))

    def pointer_scores(self, s: torch.Tensor, enc: torch.Tensor) -> torch.Tensor:
        return scaled_dot_scores(self.q_proj(s), self.k_proj(enc))

    def forward(self, src_ids, src_mask, hyp_ids, hyp_mask, enc_states=None) -> torch.Tensor:
        """Per-slot joint log-probabilities, shape ``(B, T-1, V+M)``.

        ``enc_states`` replaces the encoder output when given, which lets
        callers inject externally computed source representations.
        """
        enc = self.encode(src_ids, src_mask) if enc_states is None else enc_states
        x = self.embed_hypothesis(hyp_ids, enc, src_mask)
        r = self.decode_states(x, enc, hyp_mask, src_mask)
        s = self.pool_slots(r)
        return joint_log_probs(self.tag_head(s), self.pointer_scores(s, enc), src_mask)

    # -- hooks ------------------------------------------------------------------

    def ablate_cross_attention(self) -> None:
        """Zero the cross-attention output maps so the decoder ignores the encoder."""
        with torch.no_grad():
            for layer in self.decoder.layers:
                layer.multihead_attn.out_proj.weight.zero_()
                layer.multihead_attn.out_proj.bias.zero_()

    def freeze_source_embeddings(self) -> None:
        self.src_embed.weight.requires_grad_(False)


def pad_batch(src: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]], pad_tag: int = 0,
              device=None):
    """Right-pad source ids and hypothesis joint ids; returns ids and validity masks."""
    B = len(src)
    M = max(len(s) for s in src)
    T = max(len(h) for h in hyps)
    src_ids = torch.zeros(B, M, dtype=torch.long)
    hyp_ids = torch.full((B, T), pad_tag, dtype=torch.long)
    src_mask = torch.zeros(B, M, dtype=torch.bool)
    hyp_mask = torch.zeros(B, T, dtype=torch.bool)
    for b, (s, h) in enumerate(zip(src, hyps)):
        src_ids[b, :len(s)] = torch.as_tensor(s)
        src_mask[b, :len(s)] = True
        hyp_ids[b, :len(h)] = torch.as_tensor(h)
        hyp_mask[b, :len(h)] = True
    out = src_ids, src_mask, hyp_ids, hyp_mask
    return tuple(t.to(device) for t in out) if device is not None else out
