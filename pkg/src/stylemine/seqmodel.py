"""Small attentional encoder-decoder used for transfer, mining and back-translation.

Architecture: a shared embedding table feeds a bidirectional GRU encoder and
a GRU decoder with bilinear (Luong "general") attention. With ``copy`` on, the
output distribution mixes the vocabulary softmax with the attention weights
scattered onto source token ids (pointer-generator), gated per step.
All parameters are initialised from U(-init_scale, init_scale) with a seeded
generator.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID, TokenSequence

CKPT_MAGIC = b"STYLEMINE-CKPT"
CKPT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_specials: int = 7
    embed_dim: int = 64
    hidden_dim: int = 128
    enc_layers: int = 1
    dec_layers: int = 1
    max_len: int = 100
    lr: float = 2e-3
    clip_norm: float = 1.0
    init_scale: float = 0.1
    seed: int = 0
    dtype: str = "float32"
    copy: bool = True

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.enc_layers, self.dec_layers) < 1:
            raise ModelError("model dimensions must be >= 1")
        if self.hidden_dim % 2:
            raise ModelError("hidden_dim must be even (split across encoder directions)")
        if self.max_len < 2:
            raise ModelError("max_len must be >= 2")
        if self.vocab_size <= max(self.n_specials - 1, MASK_ID):
            raise ModelError("vocab_size does not cover the special ids")
        if self.dtype not in ("float32", "float64"):
            raise ModelError(f"unsupported dtype {self.dtype}")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    @property
    def non_content_ids(self) -> tuple:
        return (PAD_ID, BOS_ID, EOS_ID) + tuple(range(MASK_ID + 1, self.n_specials))


@dataclass
class DualEmbedding:
    w: np.ndarray
    e: np.ndarray


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        E, H = cfg.embed_dim, cfg.hidden_dim
        self.embed = nn.Embedding(cfg.vocab_size, E)
        self.encoder = nn.GRU(E, H // 2, num_layers=cfg.enc_layers, batch_first=True, bidirectional=True)
        self.bridge = nn.Linear(H, H * cfg.dec_layers)
        self.decoder = nn.GRU(E, H, num_layers=cfg.dec_layers, batch_first=True)
        self.attn = nn.Linear(H, H, bias=False)
        self.combine = nn.Linear(2 * H, H)
        self.out = nn.Linear(H, cfg.vocab_size)
        self.gate = nn.Linear(2 * H + E, 1) if cfg.copy else None
        self.cfg = cfg

    def encode(self, src: torch.Tensor, lengths: torch.Tensor):
        emb = self.embed(src)
        packed = pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        states, _ = self.encoder(packed)
        states, _ = pad_packed_sequence(states, batch_first=True, total_length=src.shape[1])
        return emb, states

    def init_hidden(self, states, src_mask):
        mean = (states * src_mask.unsqueeze(-1)).sum(1) / src_mask.sum(1, keepdim=True)
        h = torch.tanh(self.bridge(mean))
        B, L = h.shape[0], self.cfg.dec_layers
        return h.view(B, L, -1).transpose(0, 1).contiguous()

    def attend(self, dec_out, dec_emb, states, src):
        """Log-probabilities over the vocabulary for each decoder step."""
        src_mask = src != PAD_ID
        scores = torch.bmm(self.attn(dec_out), states.transpose(1, 2))
        scores = scores.masked_fill(~src_mask.unsqueeze(1), float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = torch.bmm(weights, states)
        both = torch.cat([dec_out, ctx], dim=-1)
        logits = self.out(torch.tanh(self.combine(both)))
        if self.gate is None:
            return torch.log_softmax(logits, dim=-1)
        p_gen = torch.sigmoid(self.gate(torch.cat([both, dec_emb], dim=-1)))
        probs = torch.softmax(logits, dim=-1) * p_gen
        index = src.unsqueeze(1).expand(-1, dec_out.shape[1], -1)
        probs = probs.scatter_add(-1, index, weights * (1 - p_gen))
        return torch.log(probs.clamp_min(1e-30))

    def forward(self, src, lengths, dec_in):
        _, states = self.encode(src, lengths)
        h0 = self.init_hidden(states, src != PAD_ID)
        dec_emb = self.embed(dec_in)
        dec_out, _ = self.decoder(dec_emb, h0)
        return self.attend(dec_out, dec_emb, states, src)


class Model:
    """A :class:`Seq2Seq` network together with its optimizer state."""

    def __init__(self, cfg: ModelConfig, net: Seq2Seq):
        self.cfg = cfg
        self.net = net
        self.optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
        self.steps = 0

    def state_arrays(self) -> dict:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.net.state_dict().items()}

    def clone(self) -> "Model":
        other = init(self.cfg)
        other.net.load_state_dict(self.net.state_dict())
        other.optimizer.load_state_dict(self.optimizer.state_dict())
        other.steps = self.steps
        return other


def init(cfg: ModelConfig) -> Model:
    net = Seq2Seq(cfg).to(cfg.torch_dtype)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for _, p in net.named_parameters():
            p.copy_((torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * cfg.init_scale)
    return Model(cfg, net)


def _pad(rows: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.as_tensor(r, dtype=torch.long)
    return out


def _check_len(model: Model, n: int):
    if n > model.cfg.max_len:
        raise ModelError(f"sequence of length {n} exceeds max_len {model.cfg.max_len}")


def represent_batch(model: Model, seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Sum of input embeddings (w) and of encoder states (e) over content positions."""
    for s in seqs:
        _check_len(model, len(s))
    src = _pad([s.ids for s in seqs])
    lengths = torch.tensor([len(s) for s in seqs])
    keep = torch.ones_like(src, dtype=torch.bool)
    for i in model.cfg.non_content_ids:
        keep &= src != i
    keep = keep.unsqueeze(-1).to(model.cfg.torch_dtype)
    with torch.no_grad():
        emb, states = model.net.encode(src, lengths)
        w = (emb * keep).sum(1)
        e = (states * keep).sum(1)
    return w.double().numpy(), e.double().numpy()


def represent(model: Model, seq: TokenSequence) -> DualEmbedding:
    w, e = represent_batch(model, [seq])
    return DualEmbedding(w[0], e[0])


def _forward_pairs(model: Model, batch):
    if not batch:
        raise ModelError("empty batch")
    srcs, tins, touts = [], [], []
    for pair in batch:
        tgt = list(pair.tgt.content)
        _check_len(model, len(pair.src))
        _check_len(model, len(tgt) + 1)
        srcs.append(pair.src.ids)
        tins.append([BOS_ID] + tgt)
        touts.append(tgt + [EOS_ID])
    src = _pad(srcs)
    lengths = torch.tensor([len(s) for s in srcs])
    logp = model.net(src, lengths, _pad(tins))
    return logp, _pad(touts)


def batch_loss(model: Model, batch) -> torch.Tensor:
    """Mean per-token cross-entropy of a batch of pairs (teacher forcing)."""
    logp, target = _forward_pairs(model, batch)
    return nn.functional.nll_loss(logp.reshape(-1, logp.shape[-1]), target.reshape(-1), ignore_index=PAD_ID)


def token_accuracy(model: Model, batch) -> tuple[int, int]:
    """(correct, total) teacher-forced argmax predictions over target tokens incl. EOS."""
    model.net.eval()
    with torch.no_grad():
        logp, target = _forward_pairs(model, batch)
    keep = target != PAD_ID
    correct = (logp.argmax(-1) == target) & keep
    return int(correct.sum()), int(keep.sum())


def train_step(model: Model, batch) -> float:
    """One clipped Adam update on ``batch``; returns the pre-update loss."""
    model.net.train()
    model.optimizer.zero_grad()
    loss = batch_loss(model, batch)
    loss.backward()
    if model.cfg.clip_norm:
        nn.utils.clip_grad_norm_(model.net.parameters(), model.cfg.clip_norm)
    model.optimizer.step()
    model.steps += 1
    return float(loss.item())


def _banned_ids(cfg: ModelConfig) -> list:
    return [PAD_ID, BOS_ID, UNK_ID, MASK_ID] + list(range(MASK_ID + 1, cfg.n_specials))


def decode_batch(model: Model, srcs: Sequence[TokenSequence], target_tag_id: int | None,
                 max_len: int | None = None) -> list[TokenSequence | None]:
    """Greedy decoding conditioned on a target-style tag.

    Any existing style prefix on a source is replaced by ``target_tag_id``
    (dropped when it is None, i.e. plain reconstruction).
    Returns content-only sequences; ``None`` where nothing but EOS was produced.
    """
    if not srcs:
        return []
    max_len = model.cfg.max_len if max_len is None else min(max_len, model.cfg.max_len)
    head = () if target_tag_id is None else (target_tag_id,)
    rows = [head + tuple(s.content) for s in srcs]
    for r in rows:
        _check_len(model, len(r))
    src = _pad(rows)
    lengths = torch.tensor([len(r) for r in rows])
    src_mask = src != PAD_ID
    B = len(rows)
    banned = torch.tensor(_banned_ids(model.cfg))
    out = [[] for _ in range(B)]
    done = torch.zeros(B, dtype=torch.bool)
    model.net.eval()
    with torch.no_grad():
        _, states = model.net.encode(src, lengths)
        h = model.net.init_hidden(states, src_mask)
        prev = torch.full((B, 1), BOS_ID, dtype=torch.long)
        for _ in range(max_len):
            dec_emb = model.net.embed(prev)
            dec_out, h = model.net.decoder(dec_emb, h)
            logp = model.net.attend(dec_out, dec_emb, states, src)[:, 0]
            logp[:, banned] = float("-inf")
            nxt = logp.argmax(-1)
            for i in torch.nonzero(~done).flatten().tolist():
                tok = int(nxt[i])
                if tok == EOS_ID:
                    done[i] = True
                else:
                    out[i].append(tok)
            if bool(done.all()):
                break
            prev = nxt.unsqueeze(1)
    return [TokenSequence(o) if o else None for o in out]


def decode(model: Model, src: TokenSequence, target_tag_id: int | None, max_len: int | None = None):
    return decode_batch(model, [src], target_tag_id, max_len)[0]


# --- checkpoints --------------------------------------------------------------
#
# Layout: magic, u32 version, u32 header length, JSON header, raw little-endian
# tensor bytes in header order. No timestamps, so identical states give
# identical files.

def save_checkpoint(model: Model, path) -> None:
    arrays = model.state_arrays()
    tensors = []
    blob = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name]).astype(arrays[name].dtype.newbyteorder("<"))
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "nbytes": arr.nbytes})
        blob.write(arr.tobytes())
    header = json.dumps({"config": asdict(model.cfg), "steps": model.steps, "tensors": tensors},
                        sort_keys=True).encode("utf-8")
    data = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + blob.getvalue()
    Path(path).write_bytes(data)


def load_checkpoint(path, expect: ModelConfig | None = None) -> Model:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ModelError(f"{path} is not a checkpoint")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CKPT_VERSION:
        raise ModelError(f"checkpoint version {version} unsupported (expected {CKPT_VERSION})")
    pos += 8
    header = json.loads(data[pos: pos + hlen])
    pos += hlen
    cfg = ModelConfig(**header["config"])
    if expect is not None:
        for key in ("vocab_size", "embed_dim", "hidden_dim", "enc_layers", "dec_layers", "n_specials"):
            if getattr(cfg, key) != getattr(expect, key):
                raise ModelError(f"checkpoint {key}={getattr(cfg, key)} does not match {getattr(expect, key)}")
    model = init(cfg)
    own = model.net.state_dict()
    state = {}
    for t in header["tensors"]:
        arr = np.frombuffer(data, dtype=np.dtype(t["dtype"]), count=int(np.prod(t["shape"], dtype=np.int64)),
                            offset=pos).reshape(t["shape"])
        pos += t["nbytes"]
        if t["name"] not in own or tuple(own[t["name"]].shape) != tuple(arr.shape):
            raise ModelError(f"tensor {t['name']} has unexpected shape {arr.shape}")
        state[t["name"]] = torch.from_numpy(arr.copy())
    if set(state) != set(own):
        raise ModelError("checkpoint tensors do not match the model")
    model.net.load_state_dict(state)
    model.steps = header["steps"]
    return model
