"""Binary model snapshots.

Layout (all integers little-endian uint32, all floats little-endian
float32):

    magic  b"FUSEMT1\\n"
    variant tag      : length + utf-8 bytes
    config echo      : length + utf-8 "key=value" lines
    tensor count
    per tensor       : name length + name, rank, dims, raw float data

Tensors are written in sorted name order so the same model always
produces the same bytes.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from fusemt import fusion, lm as lm_mod, tm as tm_mod
from fusemt.errors import ConfigError, DataError, VocabularyMismatchError
from fusemt.training import TrainConfig, TrainedModel
from fusemt.vocab import Vocabulary

MAGIC = b"FUSEMT1\n"
LM_TAG = "lm"
TAGS = fusion.VARIANTS + (LM_TAG,)


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_checkpoint(path, variant: str, config: dict[str, str],
                     tensors: dict[str, np.ndarray]) -> None:
    if variant not in TAGS:
        raise ConfigError(f"unknown model variant {variant!r}")
    blob = [MAGIC, _pack_str(variant)]
    echo = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    blob.append(_pack_str(echo))
    blob.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        blob.append(_pack_str(name))
        blob.append(struct.pack("<I", data.ndim))
        blob.append(struct.pack(f"<{data.ndim}I", *data.shape))
        blob.append(data.tobytes())
    Path(path).write_bytes(b"".join(blob))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.path = path
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.raw):
            raise DataError(
                f"checkpoint {self.path} truncated at offset {self.at} "
                f"(needed {n} more bytes)"
            )
        out = self.raw[self.at:self.at + n]
        self.at += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def read_checkpoint(path) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise DataError(
            f"bad checkpoint magic at offset 0 in {path}: "
            f"expected {MAGIC!r}, found {magic!r}"
        )
    variant = reader.string()
    if variant not in TAGS:
        raise ConfigError(f"checkpoint {path} has unknown variant tag {variant!r}")
    config: dict[str, str] = {}
    echo = reader.string()
    for line in echo.splitlines():
        key, _, value = line.partition("=")
        config[key] = value
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.string()
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        flat = np.frombuffer(reader.take(4 * count), dtype="<f4")
        tensors[name] = flat.reshape(dims).astype(np.float32)
    if reader.at != len(reader.raw):
        raise DataError(
            f"checkpoint {path} has {len(reader.raw) - reader.at} trailing "
            f"bytes at offset {reader.at}"
        )
    return variant, config, tensors


def _config_echo(model: TrainedModel) -> dict[str, str]:
    echo = {f.name: str(getattr(model.cfg, f.name))
            for f in dataclasses.fields(TrainConfig)}
    echo["lm_level"] = model.lm_level
    return echo


def save_model(path, model: TrainedModel) -> None:
    """Write every parameter tensor (decoder, fusion head, frozen LM)."""
    tensors = {f"tm.{k}": t.data for k, t in model.tm_params.tensors().items()}
    tensors.update({k: t.data for k, t in model.head.tensors().items()})
    if model.lm_params is not None:
        tensors.update({f"lm.{k}": t.data
                        for k, t in model.lm_params.tensors().items()})
    write_checkpoint(path, model.variant, _config_echo(model), tensors)


def _parse_config(echo: dict[str, str]) -> TrainConfig:
    kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in echo:
            caster = float if f.type in ("float", float) else int
            kwargs[f.name] = caster(echo[f.name])
    return TrainConfig(**kwargs)


def _check_vocab(name: str, vocab: Vocabulary, rows: int) -> None:
    if len(vocab) != rows:
        raise VocabularyMismatchError(
            f"{name} vocabulary has {len(vocab)} entries but the checkpoint "
            f"was trained with {rows}"
        )


def save_lm(path, lm_params: lm_mod.LmParams, cfg: TrainConfig) -> None:
    """Write a standalone language-model checkpoint (tag "lm")."""
    echo = {f.name: str(getattr(cfg, f.name))
            for f in dataclasses.fields(TrainConfig)}
    write_checkpoint(path, LM_TAG, echo,
                     {k: t.data for k, t in lm_params.tensors().items()})


def load_lm(path, vocab: Vocabulary) -> lm_mod.LmParams:
    """Rebuild a standalone language model (not frozen)."""
    tag, _, tensors = read_checkpoint(path)
    if tag != LM_TAG:
        raise ConfigError(
            f"{path} is a {tag!r} checkpoint, not a language model"
        )
    _check_vocab("language-model", vocab, tensors["embed"].shape[0])
    params = lm_mod.LmParams.create(tensors["embed"].shape[0],
                                    tensors["embed"].shape[1],
                                    tensors["W_out"].shape[0], seed=0)
    for name, tensor in params.tensors().items():
        tensor.data = np.ascontiguousarray(tensors[name])
    return params


def load_model(path, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
               lm_vocab: Optional[Vocabulary] = None) -> TrainedModel:
    """Rebuild a decodable model; the embedded LM comes back frozen."""
    variant, echo, tensors = read_checkpoint(path)
    if variant == LM_TAG:
        raise ConfigError(
            f"{path} is a standalone language-model checkpoint, not a "
            f"translation model"
        )
    cfg = _parse_config(echo)
    lm_level = echo.get("lm_level", "token")

    embed = tensors["tm.src_embed"].shape[1]
    hidden = tensors["tm.W_att"].shape[0]
    _check_vocab("source", src_vocab, tensors["tm.src_embed"].shape[0])
    _check_vocab("target", tgt_vocab, tensors["tm.W_out"].shape[1])
    tm_params = tm_mod.TmParams.create(len(src_vocab), len(tgt_vocab), embed,
                                       hidden, seed=0)
    for name, tensor in tm_params.tensors().items():
        tensor.data = np.ascontiguousarray(tensors[f"tm.{name}"])

    lm_params = None
    lm_size = None
    if any(key.startswith("lm.") for key in tensors):
        if lm_vocab is None:
            raise ConfigError(
                f"checkpoint {path} embeds a language model; lm_vocab is required"
            )
        lm_size = tensors["lm.embed"].shape[0]
        _check_vocab("language-model", lm_vocab, lm_size)
        lm_params = lm_mod.LmParams.create(
            lm_size, tensors["lm.embed"].shape[1],
            tensors["lm.W_out"].shape[0], seed=0)
        for name, tensor in lm_params.tensors().items():
            tensor.data = np.ascontiguousarray(tensors[f"lm.{name}"])
        lm_params.freeze()
    elif variant != "baseline":
        raise DataError(
            f"checkpoint {path} is variant {variant!r} but embeds no language model"
        )

    head = fusion.make_head(variant, hidden, len(tgt_vocab), lm_size, seed=0)
    for name, tensor in head.tensors().items():
        tensor.data = np.ascontiguousarray(tensors[name])

    return TrainedModel(variant=variant, cfg=cfg, src_vocab=src_vocab,
                        tgt_vocab=tgt_vocab, tm_params=tm_params, head=head,
                        lm_params=lm_params,
                        lm_vocab=lm_vocab if lm_params is not None else None,
                        lm_level=lm_level)
