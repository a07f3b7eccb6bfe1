# SPDX-License-Identifier: MIT

from typing import Optional


class MlconvError(Exception):
    def __init__(self,
                 message: Optional[str] = None,
                 inner: Optional[BaseException] = None):
        super().__init__(message)
        self.inner = inner

    def __str__(self):
        return "\n".join(
            [super().__str__()]
            + ([f"inner: {self.inner}"] if self.inner else []))


class TensorShapeError(MlconvError):
    pass


class DecompositionError(MlconvError):
    pass


class ConfigError(MlconvError):
    def __init__(self,
                 message: Optional[str] = None,
                 inner: Optional[BaseException] = None,
                 line: Optional[int] = None,
                 layer_index: Optional[int] = None):
        super().__init__(message=message, inner=inner)
        self.line = line
        self.layer_index = layer_index

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.layer_index is not None:
            where.append(f"layer {self.layer_index}")
        text = super().__str__()
        return f"{', '.join(where)}: {text}" if where else text


class TopologyError(ConfigError):
    pass


class DatasetFormatError(MlconvError):
    def __init__(self,
                 message: Optional[str] = None,
                 inner: Optional[BaseException] = None,
                 path: Optional[str] = None,
                 offset: Optional[int] = None):
        super().__init__(message=message, inner=inner)
        self.path = path
        self.offset = offset

    def __str__(self):
        return "\n".join([
            super().__str__(),
            f"file: {self.path}",
            f"offset: {self.offset}"
        ])


class CheckpointError(MlconvError):
    pass


class TrainingDiverged(MlconvError):
    def __init__(self,
                 message: Optional[str] = None,
                 inner: Optional[BaseException] = None,
                 epoch: Optional[int] = None,
                 step: Optional[int] = None):
        super().__init__(message=message, inner=inner)
        self.epoch = epoch
        self.step = step

    def __str__(self):
        return "\n".join([
            super().__str__(),
            f"epoch: {self.epoch}, step: {self.step}"
        ])
