"""Leitura de MNIST (IDX), subconjunto fixo, pré-processamento raw/fft e
o conjunto sintético usado nos testes rápidos."""
import gzip
from pathlib import Path
from typing import Iterator, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .ctensor import CTensor, DftNorm, RTensor, dft2d_centered
from .errors import DomainError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError, StagePlanError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

Value = Union[CTensor, RTensor]
FeatureMode = Literal["raw", "fft"]


class Dataset(BaseModel):
    """Imagens em [0, 1] com rótulos inteiros"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: np.ndarray = Field(..., description="Imagens (N, H, W) em [0, 1]")
    labels: np.ndarray = Field(..., description="Rótulos inteiros (N,)")
    split: str = Field("train", description="Identificação do split")
    n_classes: int = Field(10, ge=2, description="Número de classes")

    @model_validator(mode="after")
    def _consistent(self) -> "Dataset":
        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"imagens {self.images.shape} incompatíveis com rótulos {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"rótulos fora de [0, {self.n_classes})")
        return self

    def __len__(self) -> int:
        return int(self.labels.shape[0])


class FeatureSet(BaseModel):
    """Entradas já pré-processadas (N, c, H, W) prontas para a rede"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: Value
    labels: np.ndarray
    n_classes: int = 10
    split: str = "train"

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.inputs.shape[1:])

    def take(self, idx: np.ndarray) -> Tuple[Value, np.ndarray]:
        if isinstance(self.inputs, CTensor):
            batch = CTensor(self.inputs.re[idx], self.inputs.im[idx])
        else:
            batch = RTensor(self.inputs.data[idx])
        return batch, self.labels[idx]


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as handle:
            return handle.read()
    return path.read_bytes()


def _header(raw: bytes, magic: int, ndim: int, path) -> Tuple[int, ...]:
    size = 4 * (ndim + 1)
    if len(raw) < size:
        raise IdxTruncatedError(f"{path}: cabeçalho IDX truncado")
    fields = np.frombuffer(raw[:size], dtype=">u4")
    if int(fields[0]) != magic:
        raise IdxMagicError(f"{path}: número mágico 0x{int(fields[0]):08x}, esperado 0x{magic:08x}")
    dims = tuple(int(d) for d in fields[1:])
    if len(raw) - size < int(np.prod(dims)):
        raise IdxTruncatedError(f"{path}: esperados {int(np.prod(dims))} bytes de dados")
    return dims


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], split: str = "train") -> Dataset:
    """Lê o par de arquivos IDX (big-endian) e escala os pixels por 1/255."""
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)
    n, h, w = _header(raw_images, IMAGES_MAGIC, 3, images_path)
    (n_labels,) = _header(raw_labels, LABELS_MAGIC, 1, labels_path)
    if n != n_labels:
        raise IdxCountMismatchError(f"{n} imagens e {n_labels} rótulos")
    pixels = np.frombuffer(raw_images, dtype=np.uint8, count=n * h * w, offset=16)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    images = pixels.reshape(n, h, w).astype(np.float64) / 255.0
    n_classes = max(10, int(labels.max()) + 1) if n else 10
    return Dataset(images=images, labels=labels, split=split, n_classes=n_classes)


def write_idx(ds: Dataset, images_path: Union[str, Path], labels_path: Union[str, Path]) -> None:
    """Grava o par IDX; inverso exato de `load_idx` para pixels vindos de u8."""
    n, h, w = ds.images.shape
    pixels = np.rint(ds.images * 255.0).clip(0, 255).astype(np.uint8)
    Path(images_path).write_bytes(
        np.array([IMAGES_MAGIC, n, h, w], dtype=">u4").tobytes() + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        np.array([LABELS_MAGIC, n], dtype=">u4").tobytes() + ds.labels.astype(np.uint8).tobytes()
    )


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{stem} não encontrado em {directory}")


def load_mnist_dir(directory: Union[str, Path], split: str = "train") -> Dataset:
    """Lê `train-*` ou `t10k-*` de um diretório no layout padrão do MNIST."""
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    return load_idx(
        _find(directory, f"{prefix}-images-idx3-ubyte"),
        _find(directory, f"{prefix}-labels-idx1-ubyte"),
        split=split,
    )


def subset_indices(n_total: int, n: int, seed: int) -> np.ndarray:
    if n > n_total:
        raise DomainError(f"subconjunto de {n} maior que o conjunto ({n_total})")
    return np.random.default_rng(seed).permutation(n_total)[:n]


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Amostra fixa sem reposição: mesma semente, mesmo subconjunto."""
    idx = subset_indices(len(ds), n, seed)
    return ds.model_copy(update={"images": ds.images[idx], "labels": ds.labels[idx]})


def holdout(features: "FeatureSet", n: int, seed: int) -> Tuple["FeatureSet", "FeatureSet"]:
    """Reserva `n` amostras fixas do treino para validação; devolve (treino, validação)."""
    if n >= len(features):
        raise DomainError(f"validação de {n} amostras esvazia o treino ({len(features)})")
    held = np.sort(subset_indices(len(features), n, seed))
    rest = np.setdiff1d(np.arange(len(features)), held)

    def part(idx: np.ndarray, split: str) -> FeatureSet:
        inputs, labels = features.take(idx)
        return features.model_copy(update={"inputs": inputs, "labels": labels, "split": split})

    return part(rest, features.split), part(held, "valid")


def featurize(ds: Dataset, mode: FeatureMode = "raw", kind: str = "complex",
              norm: DftNorm = "ortho") -> FeatureSet:
    """raw: inclusão R -> C (parte imaginária nula); fft: DFT 2D centrada.

    Redes reais recebem os pixels (raw) ou re/im empilhados como dois canais (fft).
    """
    images = ds.images[:, None]
    if mode == "raw":
        inputs: Value = CTensor(images) if kind == "complex" else RTensor(images)
    elif mode == "fft":
        spectrum = dft2d_centered(images, norm)
        if kind == "complex":
            inputs = spectrum
        else:
            inputs = RTensor(np.concatenate([spectrum.re, spectrum.im], axis=1))
    else:
        raise DomainError(f"modo de pré-processamento desconhecido: {mode!r}")
    return FeatureSet(inputs=inputs, labels=ds.labels, n_classes=ds.n_classes, split=ds.split)


def iterate_batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Índices dos lotes de uma época; embaralhados quando há gerador."""
    if n == 0:
        raise StagePlanError("conjunto de dados vazio")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def synthetic_gaussians(n_per_class: int, n_classes: int, dim: int, seed: int,
                        split: str = "train") -> Dataset:
    """Blobs gaussianos com médias a >= 10 sigma umas das outras.

    As médias dependem só da semente; as amostras de cada split usam uma
    sub-semente própria. A escala afim para [0, 1] é fixa por semente.
    """
    if min(n_per_class, dim) < 1 or n_classes < 2:
        raise DomainError("tamanhos do conjunto sintético devem ser positivos")
    means = np.random.default_rng(seed).standard_normal((n_classes, dim))
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
    closest = gaps[np.triu_indices(n_classes, 1)].min()
    means = means * (10.0 / closest)

    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.repeat(np.arange(n_classes), n_per_class)
    points = means[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    points, labels = points[order], labels[order]

    lo, hi = means.min() - 6.0, means.max() + 6.0
    points = np.clip((points - lo) / (hi - lo), 0.0, 1.0)
    return Dataset(images=points[:, None, :], labels=labels, split=split, n_classes=n_classes)


def load_splits(dataset, kind: str = "complex") -> Tuple[FeatureSet, FeatureSet]:
    """Treino e teste pré-processados a partir de um `DatasetConfig`."""
    if dataset.source == "synthetic":
        train = synthetic_gaussians(dataset.n_per_class, dataset.n_classes, dataset.dim, dataset.seed, "train")
        test = synthetic_gaussians(dataset.n_per_class, dataset.n_classes, dataset.dim, dataset.seed, "test")
    else:
        train = load_mnist_dir(dataset.path, "train")
        test = load_mnist_dir(dataset.path, "test")
        if dataset.subset_n is not None:
            train = subset(train, min(dataset.subset_n, len(train)), dataset.seed)
        if dataset.test_n is not None:
            test = subset(test, min(dataset.test_n, len(test)), dataset.seed)
    return (
        featurize(train, dataset.features, kind, dataset.fft_norm),
        featurize(test, dataset.features, kind, dataset.fft_norm),
    )
