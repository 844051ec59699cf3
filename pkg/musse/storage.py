# -*- coding: utf-8 -*-

"""
Key-value storage for on-disk artifacts.

A sequence directory, a network checkpoint and a run directory are all
directories of small files addressed by a key. Each backend here maps a key
to one file and knows how to encode the value.
"""

from typing import (
    Any, Dict, Callable,
    Iterable, Optional,
    Sequence, Union,
)
from abc import (
    ABC, abstractmethod,
)
import os
import json
import pathlib
import numpy as np
from PIL import Image
from .errors import StorageIOError, FormatError

# raw blobs are always little-endian float32
BLOB_DTYPE = np.dtype('<f4')


class Storage(ABC):
    """
    Base storage class.

    The key is a relative name, such as ``pre`` or ``encoder.blocks.0.weight``.
    """

    def close(self):
        """
        Release resources held by the storage, if any.
        """

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @abstractmethod
    def exists(self, key: str, **kwargs) -> bool:
        """
        Check if given key exists in the storage.
        """

    @abstractmethod
    def fetch(self, key: str, default: Any = None, **kwargs) -> Any:
        """
        Fetch value of the given key, or default if key not exists.
        """

    @abstractmethod
    def set(self, key: str, value: Any, **kwargs) -> Any:
        """
        Set value for the given key.
        """

    def get(self, key: str, func: Callable = None, func_args: Sequence[Any] = None,
            func_kwargs: Dict[str, Any] = None, **kwargs) -> Any:
        """
        If func is None, it's equal to method `fetch()`.
        If func not None,
            get value from storage if key exists;
            else run the func and save value to the storage.
        """
        if func is None or self.exists(key):
            return self.fetch(key, **kwargs)
        value = func(*(func_args or []), **(func_kwargs or {}))
        self.set(key, value)
        return value

    @abstractmethod
    def pop(self, key: str, **kwargs) -> Any:
        """
        Delete value for the given key.
        """

    def keys(self) -> Iterable[str]:
        """
        Get all keys in the storage.
        """
        raise NotImplementedError("It's not allowed to get all keys.")


class LocalFileStorage(Storage, ABC):
    """
    Each key corresponds to a file.
    """
    @abstractmethod
    def _get_filepath(self, key: str) -> str:
        """
        Get filepath for the given key to save value.
        """

    def exists(self, key: str, **kwargs) -> bool:
        return os.path.exists(self._get_filepath(key))

    @abstractmethod
    def _read_file(self, filepath: str, **kwargs) -> Any:
        """
        Read file content.
        """

    def fetch(self, key: str, default: Any = None, **kwargs) -> Any:
        """
        If file exists, read file content; else, return default.
        """
        filepath = self._get_filepath(key)
        if not os.path.exists(filepath):
            return default
        try:
            return self._read_file(filepath, **kwargs)
        except OSError as e:
            raise StorageIOError(f"io error: can not read {filepath}: {e}") from e

    @abstractmethod
    def _write_file0(self, filepath: str, content: Any):
        """
        The actual write file method.
        """

    def _write_file(self, filepath: str, content: Any):
        """
        Write content to file.
        """
        try:
            # create parent dir first
            os.makedirs(os.path.abspath(os.path.dirname(filepath)), exist_ok=True)
            self._write_file0(filepath, content)
        except OSError as e:
            raise StorageIOError(f"io error: can not write {filepath}: {e}") from e

    def set(self, key: str, value: Any, **kwargs) -> bool:
        self._write_file(self._get_filepath(key), value)
        return True

    def pop(self, key: str, **kwargs) -> bool:
        filepath = self._get_filepath(key)
        if os.path.exists(filepath):
            os.remove(filepath)
            return True
        return False


class SimpleLocalFileStorage(LocalFileStorage, ABC):
    """
    All files saved in a directory, and key to be relative path without suffix.
    """
    def __init__(self, root_dir: Union[str, os.PathLike], suf: str = ''):
        """
        :param root_dir:    root dir for files
        :param suf:         commonly should start with '.'
        """
        self.root_dir = os.fspath(root_dir)
        self.suf = suf

    def _get_filepath(self, key: str) -> str:
        return os.path.join(self.root_dir, key + self.suf)

    def keys(self) -> Iterable[str]:
        root = pathlib.Path(self.root_dir)
        if not root.is_dir():
            return []
        result = []
        for f in root.rglob("*" + self.suf):
            if f.is_file():
                key = f.relative_to(root).as_posix()
                if self.suf:
                    key = key[:-len(self.suf)]
                result.append(key)
        return sorted(result)


class BinaryFileStorage(SimpleLocalFileStorage):
    """
    Each value stored in a binary file.
    """
    def _read_file(self, filepath: str, **kwargs) -> bytes:
        with open(filepath, 'rb') as f:
            return f.read()

    def _write_file0(self, filepath: str, content: bytes):
        with open(filepath, 'wb') as f:
            f.write(content)


class Float32BlobStorage(BinaryFileStorage):
    """
    Each value is a real array stored as raw little-endian float32, row-major.
    """
    def __init__(self, root_dir: Union[str, os.PathLike], suf: str = '.f32'):
        super().__init__(root_dir, suf)

    def _read_file(self, filepath: str, shape: Optional[Sequence[int]] = None, **kwargs) -> np.ndarray:
        raw = super()._read_file(filepath)
        if len(raw) % BLOB_DTYPE.itemsize:
            raise FormatError(f"format error: {filepath} is not a float32 blob")
        data = np.frombuffer(raw, dtype=BLOB_DTYPE).astype(np.float32)
        if shape is not None:
            expected = int(np.prod(shape))
            if data.size != expected:
                raise FormatError(f"format error: {filepath} holds {data.size} values, expected {expected}")
            data = data.reshape(tuple(shape))
        return data

    def _write_file0(self, filepath: str, content: np.ndarray):
        array = np.ascontiguousarray(np.asarray(content), dtype=BLOB_DTYPE)
        super()._write_file0(filepath, array.tobytes(order='C'))


class JsonFileStorage(SimpleLocalFileStorage):
    """
    Each value is a json document.

    Output is deterministic, so writing the same value twice gives the same bytes.
    """
    def __init__(self, root_dir: Union[str, os.PathLike], suf: str = '.json', encoding='utf-8'):
        super().__init__(root_dir, suf)
        self.encoding = encoding

    def _read_file(self, filepath: str, **kwargs) -> Union[dict, list]:
        with open(filepath, encoding=self.encoding) as f:
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise FormatError(f"format error: {filepath} is not valid json: {e}") from e

    def _write_file0(self, filepath: str, content: Union[dict, list]):
        text = json.dumps(content, indent=2, sort_keys=True, ensure_ascii=False)
        with open(filepath, 'w', encoding=self.encoding, newline='\n') as f:
            f.write(text + '\n')


class ImageFileStorage(SimpleLocalFileStorage):
    """
    Each value is a Pillow image.
    """
    def __init__(self, root_dir: Union[str, os.PathLike], suf: str = '.png'):
        super().__init__(root_dir, suf)

    def _read_file(self, filepath: str, **kwargs) -> Image.Image:
        with Image.open(filepath) as image:
            image.load()
            return image

    def _write_file0(self, filepath: str, content: Image.Image):
        content.save(filepath)
