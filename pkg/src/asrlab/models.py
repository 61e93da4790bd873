"""The two recognizer architectures and their checkpoint format.

CtcModel: stacked LSTMs followed by a final dense projection onto the
subword vocabulary plus a trailing blank. LasModel: transformer encoder
over features, autoregressive transformer decoder over subword ids with
BOS/EOS appended after the subword table.

Parameter names follow "submodule.index.param" (e.g. "lstm.0.w",
"decoder.1.cross_attn.wq.w"); freeze policies and checkpoints key off
these names. Feature mean/variance stats ride along as non-trainable
buffers under "norm.*".
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import CtcConfig, LasConfig, model_config_from_dict
from .errors import DataError, ShapeError, UsageError
from .layers import (Dense, DecoderBlock, EncoderBlock, Embedding, LayerNorm,
                     LstmLayer, causal_mask, key_padding_mask, positional_encoding)
from .tensor import Tensor

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


class _ModelBase:
    def __init__(self, cfg):
        self.cfg = cfg
        self.norm_mean = np.zeros(cfg.feat_dim, dtype=np.float32)
        self.norm_std = np.ones(cfg.feat_dim, dtype=np.float32)

    def set_normalizer(self, mean: np.ndarray, std: np.ndarray) -> None:
        if mean.shape != (self.cfg.feat_dim,) or std.shape != (self.cfg.feat_dim,):
            raise ShapeError(f"normalizer dims {mean.shape} do not match feat_dim {self.cfg.feat_dim}")
        self.norm_mean = mean.astype(np.float32)
        self.norm_std = std.astype(np.float32)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        if feats.shape[-1] != self.cfg.feat_dim:
            raise ShapeError(f"feature dim {feats.shape[-1]} does not match config {self.cfg.feat_dim}")
        return ((feats - self.norm_mean) / self.norm_std).astype(np.float32)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"norm.mean": self.norm_mean, "norm.std": self.norm_std}

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.parameters().items()}
        out.update(self.buffers())
        return out

    def set_trainable(self, names) -> None:
        """requires_grad only for the given parameter names."""
        names = set(names)
        params = self.parameters()
        unknown = names - set(params)
        if unknown:
            raise UsageError(f"unknown parameter names: {sorted(unknown)}")
        for name, p in params.items():
            p.requires_grad = name in names
            p.grad = None


class CtcModel(_ModelBase):
    def __init__(self, cfg: CtcConfig, seed: int = 0):
        super().__init__(cfg)
        rng = np.random.default_rng(seed)
        self.lstms = []
        d_in = cfg.feat_dim
        for _ in range(cfg.layers):
            self.lstms.append(LstmLayer(d_in, cfg.hidden, rng))
            d_in = cfg.hidden
        self.dense = Dense(cfg.hidden, cfg.output_dim, rng)

    @property
    def blank_id(self) -> int:
        return self.cfg.vocab

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.lstms):
            for name, p in layer.parameters().items():
                out[f"lstm.{i}.{name}"] = p
        for name, p in self.dense.parameters().items():
            out[f"dense.{name}"] = p
        return out

    def parameter_groups(self) -> dict[str, list[str]]:
        dense = [f"dense.{n}" for n in self.dense.parameters()]
        return {"dense": dense, "all": list(self.parameters())}

    def top_lstm_names(self, k: int) -> list[str]:
        """Names of the k LSTM layers nearest the output."""
        k = min(k, len(self.lstms))
        names = []
        for i in range(len(self.lstms) - k, len(self.lstms)):
            names.extend(f"lstm.{i}.{n}" for n in self.lstms[i].parameters())
        return names

    def forward(self, feats: np.ndarray) -> Tensor:
        """Padded features [T,B,D] -> log-probs Tensor [T,B,V+1]."""
        t_len, batch, _ = feats.shape
        x = self.normalize(feats)
        xs = [Tensor(np.ascontiguousarray(x[t])) for t in range(t_len)]
        for layer in self.lstms:
            xs = layer.forward(xs)
        h = T.reshape(T.stack0(xs), (t_len * batch, self.cfg.hidden))
        logits = self.dense(h)
        lp = T.log_softmax(logits, axis=-1)
        return T.reshape(lp, (t_len, batch, self.cfg.output_dim))

    def log_probs_single(self, feats: np.ndarray) -> np.ndarray:
        """Inference path for one utterance [T,D] -> [T,V+1] (no tape)."""
        return self.forward(feats[:, None, :]).data[:, 0]


def ctc_forward(model: CtcModel, feats: np.ndarray) -> Tensor:
    return model.forward(feats)


class LasModel(_ModelBase):
    def __init__(self, cfg: LasConfig, seed: int = 0):
        super().__init__(cfg)
        rng = np.random.default_rng(seed)
        self.input_proj = Dense(cfg.feat_dim, cfg.dim, rng)
        self.encoder = [EncoderBlock(cfg.dim, cfg.ff_dim, cfg.heads, rng) for _ in range(cfg.enc_blocks)]
        self.enc_norm = LayerNorm(cfg.dim)
        self.embed = Embedding(cfg.output_dim, cfg.dim, rng)
        self.decoder = [DecoderBlock(cfg.dim, cfg.ff_dim, cfg.heads, rng) for _ in range(cfg.dec_blocks)]
        self.dec_norm = LayerNorm(cfg.dim)
        self.dense = Dense(cfg.dim, cfg.output_dim, rng)
        self._pe = positional_encoding(512, cfg.dim)

    @property
    def bos_id(self) -> int:
        return self.cfg.vocab

    @property
    def eos_id(self) -> int:
        return self.cfg.vocab + 1

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, p in self.input_proj.parameters().items():
            out[f"input_proj.{name}"] = p
        for i, block in enumerate(self.encoder):
            for name, p in block.parameters().items():
                out[f"encoder.{i}.{name}"] = p
        for name, p in self.enc_norm.parameters().items():
            out[f"enc_norm.{name}"] = p
        for name, p in self.embed.parameters().items():
            out[f"embed.{name}"] = p
        for i, block in enumerate(self.decoder):
            for name, p in block.parameters().items():
                out[f"decoder.{i}.{name}"] = p
        for name, p in self.dec_norm.parameters().items():
            out[f"dec_norm.{name}"] = p
        for name, p in self.dense.parameters().items():
            out[f"dense.{name}"] = p
        return out

    def parameter_groups(self) -> dict[str, list[str]]:
        names = list(self.parameters())
        dense = [n for n in names if n.startswith("dense.")]
        decoder = [n for n in names
                   if n.startswith(("decoder.", "dec_norm.", "embed.")) or n.startswith("dense.")]
        return {"dense": dense, "decoder": decoder, "all": names}

    def _pe_slice(self, length: int) -> np.ndarray:
        if length > self._pe.shape[0]:
            self._pe = positional_encoding(2 * length, self.cfg.dim)
        return self._pe[:length]

    def encode(self, feats: np.ndarray, lengths: np.ndarray | None = None):
        """Features [T,B,D] -> (memory [B,Tenc,dim], key-padding mask)."""
        t_len, batch, _ = feats.shape
        if lengths is None:
            lengths = np.full(batch, t_len, dtype=np.int64)
        x = self.normalize(feats).transpose(1, 0, 2)  # [B,T,D]
        h = self.input_proj(Tensor(np.ascontiguousarray(x)))
        h = T.mul(h, float(np.sqrt(self.cfg.dim)))  # keep content comparable to the position signal
        pe = np.broadcast_to(self._pe_slice(t_len)[None], (batch, t_len, self.cfg.dim))
        h = T.add(h, Tensor(np.ascontiguousarray(pe)))
        pad = key_padding_mask(lengths, t_len)
        for block in self.encoder:
            h = block(h, pad)
        return self.enc_norm(h), pad

    def decode_logits(self, memory: Tensor, mem_mask: np.ndarray, prefix: np.ndarray) -> Tensor:
        """Teacher-forced decoder logits [B, L, V'] for prefix ids [B, L]."""
        prefix = np.asarray(prefix, dtype=np.int64)
        batch, length = prefix.shape
        y = T.mul(self.embed(prefix), float(np.sqrt(self.cfg.dim)))
        pe = np.broadcast_to(self._pe_slice(length)[None], (batch, length, self.cfg.dim))
        y = T.add(y, Tensor(np.ascontiguousarray(pe)))
        causal = causal_mask(length)
        for block in self.decoder:
            y = block(y, memory, causal, mem_mask)
        return self.dense(self.dec_norm(y))

    def forward(self, feats: np.ndarray, lengths: np.ndarray | None, prefix: np.ndarray) -> Tensor:
        prefix = np.asarray(prefix, dtype=np.int64)
        if np.any(prefix[:, 0] != self.bos_id):
            raise DataError("decoder prefix must begin with BOS")
        memory, pad = self.encode(feats, lengths)
        return self.decode_logits(memory, pad, prefix)


def las_forward(model: LasModel, feats: np.ndarray, prefix: np.ndarray,
                lengths: np.ndarray | None = None) -> Tensor:
    """Spec-shaped wrapper: logits [prefix_len, B, V']."""
    logits = model.forward(feats, lengths, prefix)
    return T.transpose(logits, (1, 0, 2))


def build_model(cfg, seed: int = 0):
    if isinstance(cfg, CtcConfig):
        return CtcModel(cfg, seed)
    if isinstance(cfg, LasConfig):
        return LasModel(cfg, seed)
    raise UsageError(f"unknown config type {type(cfg)!r}")


# -- checkpoints ---------------------------------------------------------------
# layout: magic, u32 version, u32 header_len, header json,
#         concatenated NDT1 tensor blocks, index json, u64 index offset

class Checkpoint:
    def __init__(self, config, tensors: dict[str, np.ndarray], step: int = 0,
                 rng_state: dict | None = None):
        self.config = config
        self.tensors = tensors
        self.step = step
        self.rng_state = rng_state

    def build_model(self, seed: int = 0):
        model = build_model(self.config, seed)
        self.restore_into(model)
        return model

    def restore_into(self, model) -> None:
        if asdict(model.cfg) != asdict(self.config):
            raise DataError(f"checkpoint config {asdict(self.config)} does not match model {asdict(model.cfg)}")
        params = model.parameters()
        expected = set(params) | set(model.buffers())
        if expected != set(self.tensors):
            missing = expected ^ set(self.tensors)
            raise DataError(f"checkpoint tensor names mismatch: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = self.tensors[name]
            if arr.shape != p.data.shape:
                raise DataError(f"tensor {name} shape {arr.shape} != model {p.data.shape}")
            p.data = arr.astype(np.float32).copy()
        model.set_normalizer(self.tensors["norm.mean"], self.tensors["norm.std"])


def save_checkpoint(path, model, step: int = 0, rng_state: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CKPT_VERSION,
        "model": asdict(model.cfg),
        "step": step,
        "rng_state": rng_state,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    tensors = model.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        index = {}
        for name, arr in tensors.items():
            index[name] = fh.tell()
            T.write_array(fh, arr)
        index_bytes = json.dumps(index, sort_keys=True).encode()
        index_pos = fh.tell()
        fh.write(index_bytes)
        fh.write(struct.pack("<Q", index_pos))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[:4] != CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + header_len].decode())
        (index_pos,) = struct.unpack("<Q", raw[-8:])
        index = json.loads(raw[index_pos:-8].decode())
        tensors = {}
        for name, offset in index.items():
            tensors[name] = T.read_array(io.BytesIO(raw[offset:]))
    except (struct.error, json.JSONDecodeError, IndexError) as exc:
        raise DataError(f"{path}: corrupt checkpoint: {exc}") from exc
    cfg = model_config_from_dict(header["model"])
    return Checkpoint(cfg, tensors, step=header.get("step", 0), rng_state=header.get("rng_state"))
