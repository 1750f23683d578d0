"""Contêiner binário de checkpoint.

Layout: MAGIC, versão (u16), tamanho do JSON de metadados (u32), metadados
(JSON canônico, chaves ordenadas), número de registros (u32) e os registros:
nome (u16 + utf-8), tag (0 real, 1 complexo), ndim (u8), formato (u32 cada),
payload float64 little-endian (re e depois im), flag de máscara (u8) e os
bits da máscara empacotados. Todos os inteiros são little-endian.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import CheckpointError

MAGIC = b"CSVDCKPT"
VERSION = 1


class CheckpointRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    parts: List[np.ndarray] = Field(..., description="[re] ou [re, im]")
    mask: Optional[np.ndarray] = Field(None, description="Máscara booleana (só pesos podados)")

    @property
    def is_complex(self) -> bool:
        return len(self.parts) == 2


class Checkpoint(BaseModel):
    """Parâmetros, máscaras, estado do otimizador e metadados de uma época"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    metadata: Dict[str, Any] = Field(default_factory=dict)
    records: List[CheckpointRecord] = Field(default_factory=list)

    def record(self, name: str) -> CheckpointRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise CheckpointError(f"registro '{name}' ausente no checkpoint")

    def records_with_prefix(self, prefix: str) -> Dict[str, CheckpointRecord]:
        return {rec.name[len(prefix):]: rec for rec in self.records if rec.name.startswith(prefix)}

    # --- serialização -------------------------------------------------------
    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        chunks = [
            MAGIC,
            np.array([VERSION], dtype="<u2").tobytes(),
            np.array([len(meta)], dtype="<u4").tobytes(),
            meta,
            np.array([len(self.records)], dtype="<u4").tobytes(),
        ]
        for rec in self.records:
            name = rec.name.encode("utf-8")
            shape = rec.parts[0].shape
            chunks.append(np.array([len(name)], dtype="<u2").tobytes())
            chunks.append(name)
            chunks.append(np.array([1 if rec.is_complex else 0, len(shape)], dtype=np.uint8).tobytes())
            chunks.append(np.array(shape, dtype="<u4").tobytes())
            for part in rec.parts:
                chunks.append(np.ascontiguousarray(part, dtype="<f8").tobytes())
            if rec.mask is None:
                chunks.append(b"\x00")
            else:
                chunks.append(b"\x01")
                chunks.append(np.packbits(np.asarray(rec.mask, dtype=bool).reshape(-1)).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        reader = _Reader(raw)
        if reader.take(len(MAGIC)) != MAGIC:
            raise CheckpointError("arquivo não é um checkpoint (mágico inválido)")
        version = reader.uint("<u2")
        if version != VERSION:
            raise CheckpointError(f"versão de checkpoint não suportada: {version}")
        metadata = json.loads(reader.take(reader.uint("<u4")).decode("utf-8"))
        records = []
        for _ in range(reader.uint("<u4")):
            name = reader.take(reader.uint("<u2")).decode("utf-8")
            tag, ndim = np.frombuffer(reader.take(2), dtype=np.uint8)
            shape = tuple(int(d) for d in np.frombuffer(reader.take(4 * int(ndim)), dtype="<u4"))
            size = int(np.prod(shape))
            parts = [
                np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
                for _ in range(2 if tag else 1)
            ]
            mask = None
            if reader.take(1) == b"\x01":
                bits = np.frombuffer(reader.take((size + 7) // 8), dtype=np.uint8)
                mask = np.unpackbits(bits, count=size).astype(bool).reshape(shape)
            records.append(CheckpointRecord(name=name, parts=parts, mask=mask))
        if not reader.done:
            raise CheckpointError("bytes sobrando ao final do checkpoint")
        return cls(metadata=metadata, records=records)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncado")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint(self, dtype: str) -> int:
        width = np.dtype(dtype).itemsize
        return int(np.frombuffer(self.take(width), dtype=dtype)[0])

    @property
    def done(self) -> bool:
        return self.pos == len(self.raw)


def build_checkpoint(model, metadata: Dict[str, Any], optimizer=None, progress=None) -> Checkpoint:
    """Captura parâmetros (com máscaras), momentos ADAM e o melhor estado da parada antecipada."""
    masks = {f"{layer.name}.weight": layer.mask for layer in model.variational_layers()}
    records = [
        CheckpointRecord(name=p.name, parts=[x.copy() for x in p.parts], mask=masks.get(p.name))
        for p in model.parameters()
    ]
    meta = dict(metadata)
    if optimizer is not None:
        meta["adam_step"] = optimizer.step_count
        for name, parts in optimizer.state_arrays().items():
            records.append(CheckpointRecord(name=name, parts=[x.copy() for x in parts]))
    if progress is not None:
        meta["progress"] = {
            "best_value": progress.best_value,
            "best_epoch": progress.best_epoch,
            "wait": progress.wait,
        }
        for name, parts in progress.best_params.items():
            records.append(CheckpointRecord(name=f"best.{name}", parts=[x.copy() for x in parts]))
    return Checkpoint(metadata=meta, records=records)


def restore_model(checkpoint: Checkpoint, model) -> None:
    """Copia valores e máscaras de volta para as camadas do modelo."""
    for layer in model.variational_layers():
        for p in layer.parameters():
            rec = checkpoint.record(p.name)
            if len(rec.parts) != len(p.parts) or rec.parts[0].shape != p.shape:
                raise CheckpointError(f"parâmetro '{p.name}' incompatível com o modelo")
            p.assign(rec.parts)
        weight = checkpoint.record(f"{layer.name}.weight")
        if weight.mask is not None:
            layer.apply_mask(weight.mask)


def restore_optimizer(checkpoint: Checkpoint, optimizer) -> None:
    arrays = {rec.name: rec.parts for rec in checkpoint.records if rec.name.startswith("adam.")}
    try:
        optimizer.load_state(arrays, int(checkpoint.metadata["adam_step"]))
    except KeyError as exc:
        raise CheckpointError(f"estado do otimizador incompleto: {exc}") from None


def restore_progress(checkpoint: Checkpoint, progress) -> None:
    info = checkpoint.metadata.get("progress")
    if not info:
        return
    progress.best_value = info["best_value"]
    progress.best_epoch = info["best_epoch"]
    progress.wait = info["wait"]
    progress.best_params = {name: rec.parts for name, rec in checkpoint.records_with_prefix("best.").items()}


def rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def rng_from_state(state: Dict[str, Any]) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
