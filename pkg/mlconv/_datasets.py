# SPDX-License-Identifier: MIT

"""Dataset readers for the CIFAR binary and MNIST IDX layouts, plus
augmentation.

Images come out channels-last as float32 scaled to [0, 1] with no further
normalization.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from ._exceptions import DatasetFormatError, MlconvError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CIFAR_IMAGE_BYTES = 32 * 32 * 3
CIFAR10_RECORD = 1 + CIFAR_IMAGE_BYTES
CIFAR100_RECORD = 2 + CIFAR_IMAGE_BYTES

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Labelled images. Holds read-only views of the arrays it is given."""

    images: np.ndarray  # (n, X, Y, C) float32
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DatasetFormatError(f"images must be (n, X, Y, C), "
                                     f"got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetFormatError(f"{len(self.images)} images but "
                                     f"{len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or
                                 self.labels.max() >= self.class_count):
            raise DatasetFormatError(
                f"labels must lie in [0, {self.class_count})")
        for name in ('images', 'labels'):
            view = getattr(self, name).view()
            view.flags.writeable = False
            object.__setattr__(self, name, view)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self.images.shape[1:]  # type: ignore

    def take(self, indices: Sequence[int]) -> 'Dataset':
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices],
                       self.class_count)

    def subset(self, count: int, seed: int) -> 'Dataset':
        """`count` samples chosen by a seeded permutation."""
        count = min(count, len(self))
        order = np.random.default_rng(seed).permutation(len(self))
        return self.take(np.sort(order[:count]))


def _to_float(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float32) / np.float32(255.0)


# CIFAR #######################################################################

def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}", inner=e,
                                 path=str(path))


def read_cifar_records(path: PathLike, label_bytes: int, label_index: int,
                       class_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (uint8 images (n, 32, 32, 3), int64 labels) of one binary
    batch file. Each record is `label_bytes` label bytes followed by the
    planar R, G, B image, each plane row-major."""
    path = Path(path)
    data = _read_bytes(path)
    record = label_bytes + CIFAR_IMAGE_BYTES
    if len(data) % record:
        raise DatasetFormatError(
            f"file size {len(data)} is not a multiple of the "
            f"{record}-byte record size",
            path=str(path), offset=len(data) - len(data) % record)
    rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, record)
    labels = rows[:, label_index].astype(np.int64)
    bad = np.flatnonzero(labels >= class_count)
    if len(bad):
        raise DatasetFormatError(
            f"label {labels[bad[0]]} out of range [0, {class_count}) "
            f"in record {bad[0]}",
            path=str(path), offset=int(bad[0]) * record + label_index)
    images = rows[:, label_bytes:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def _cifar_files(path: Path, names: List[str], subdir: str,
                 split: str) -> List[Path]:
    if path.is_file():
        # a lone batch file stands in for the training data only
        if split != 'train':
            raise DatasetFormatError(
                f"a single batch file has no {split!r} split; pass the "
                f"distribution directory", path=str(path))
        return [path]
    if (path / subdir).is_dir():
        path = path / subdir
    files = [path / name for name in names]
    missing = [str(f) for f in files if not f.is_file()]
    if missing:
        raise DatasetFormatError(f"missing files: {', '.join(missing)}",
                                 path=str(path))
    return files


def _load_cifar(files: List[Path], label_bytes: int, label_index: int,
                class_count: int) -> Dataset:
    parts = [read_cifar_records(f, label_bytes, label_index, class_count)
             for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    logger.info("loaded %d images from %s", len(labels),
                ", ".join(f.name for f in files))
    return Dataset(_to_float(images), labels, class_count)


def load_cifar10(path: PathLike, split: str = 'train') -> Dataset:
    """Loads the train or test split of the binary distribution directory.
    A single batch file is accepted as the train split."""
    names = [f'data_batch_{i}.bin' for i in range(1, 6)] \
        if split == 'train' else ['test_batch.bin']
    files = _cifar_files(Path(path), names, 'cifar-10-batches-bin', split)
    return _load_cifar(files, 1, 0, 10)


def load_cifar100(path: PathLike, split: str = 'train') -> Dataset:
    """Like `load_cifar10`; records carry a coarse and a fine label byte
    and the fine label is used."""
    names = ['train.bin' if split == 'train' else 'test.bin']
    files = _cifar_files(Path(path), names, 'cifar-100-binary', split)
    return _load_cifar(files, 2, 1, 100)


# MNIST #######################################################################

def _idx_header(data: bytes, path: Path, magic: int,
                dims: int) -> Tuple[int, ...]:
    size = 4 * (1 + dims)
    if len(data) < size:
        raise DatasetFormatError("truncated IDX header", path=str(path),
                                 offset=len(data))
    found, *shape = struct.unpack(f'>{1 + dims}I', data[:size])
    if found != magic:
        raise DatasetFormatError(
            f"IDX magic 0x{found:08x}, expected 0x{magic:08x}",
            path=str(path), offset=0)
    expected = size + int(np.prod(shape))
    if len(data) != expected:
        raise DatasetFormatError(
            f"IDX payload holds {len(data) - size} bytes, header "
            f"promises {expected - size}", path=str(path),
            offset=min(len(data), expected))
    return tuple(shape)


def load_mnist_idx(images_path: PathLike, labels_path: PathLike) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_data = _read_bytes(images_path)
    label_data = _read_bytes(labels_path)
    count, rows, cols = _idx_header(image_data, images_path,
                                    IDX_IMAGES_MAGIC, 3)
    (label_count,) = _idx_header(label_data, labels_path,
                                 IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise DatasetFormatError(
            f"{count} images but {label_count} labels",
            path=str(labels_path), offset=4)
    images = np.frombuffer(image_data, dtype=np.uint8, offset=16) \
        .reshape(count, rows, cols, 1)
    labels = np.frombuffer(label_data, dtype=np.uint8, offset=8) \
        .astype(np.int64)
    if len(labels) and labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise DatasetFormatError(f"label {labels[bad]} out of range",
                                 path=str(labels_path), offset=8 + bad)
    return Dataset(_to_float(images), labels, 10)


def load_mnist(path: PathLike, split: str = 'train') -> Dataset:
    prefix = 'train' if split == 'train' else 't10k'
    path = Path(path)
    return load_mnist_idx(path / f'{prefix}-images-idx3-ubyte',
                          path / f'{prefix}-labels-idx1-ubyte')


def load_dataset(name: str, path: PathLike, split: str) -> Dataset:
    loaders = {'cifar10': load_cifar10, 'cifar100': load_cifar100,
               'mnist': load_mnist}
    if name not in loaders:
        raise DatasetFormatError(f"unknown dataset {name!r}", path=str(path))
    return loaders[name](path, split)


# augmentation ################################################################

def translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shifts the content `dx` columns right and `dy` rows down, filling
    vacated pixels with zeros."""
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        image[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def augment(image: np.ndarray, rng: np.random.Generator, flip: bool,
            max_translate: int) -> np.ndarray:
    """Random horizontal flip with probability 1/2 and a uniform integer
    translation in [-max_translate, max_translate] along both axes."""
    if max_translate < 0:
        raise MlconvError(f"max_translate must be non-negative, "
                          f"got {max_translate}")
    if flip and rng.random() < 0.5:
        image = flip_horizontal(image)
    if max_translate > 0:
        dx, dy = rng.integers(-max_translate, max_translate + 1, size=2)
        image = translate(image, int(dx), int(dy))
    return image


def augment_batch(images: np.ndarray, rng: np.random.Generator, flip: bool,
                  max_translate: int) -> np.ndarray:
    if not flip and max_translate == 0:
        return images
    return np.stack([augment(image, rng, flip, max_translate)
                     for image in images])
