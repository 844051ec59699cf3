# -*- coding: utf-8 -*-

import collections
import numpy as np
from PIL import Image
from musse.errors import FormatError
from musse.storage import (
    BinaryFileStorage, Float32BlobStorage,
    JsonFileStorage, ImageFileStorage,
)


def test_json_storage(tmp_path):
    store = JsonFileStorage(tmp_path)
    assert store.fetch('a') is None
    assert store.fetch('a', default=1) == 1
    store.set('a', {"b": [1, 2], "a": 0.5})
    assert store.exists('a')
    assert store.fetch('a') == {"a": 0.5, "b": [1, 2]}
    first = (tmp_path / 'a.json').read_bytes()
    store.set('a', {"a": 0.5, "b": [1, 2]})
    assert (tmp_path / 'a.json').read_bytes() == first
    assert store.pop('a')
    assert not store.pop('a')


def test_json_storage_bad_file(tmp_path):
    (tmp_path / 'x.json').write_text('{not json')
    try:
        JsonFileStorage(tmp_path).fetch('x')
    except FormatError:
        pass
    else:
        assert False


def test_get_with_func(tmp_path):
    store = JsonFileStorage(tmp_path)
    counter = collections.Counter()

    def compute(x):
        counter[x] += 1
        return {"x": x}

    assert store.get('k', compute, func_args=[3]) == {"x": 3}
    assert store.get('k', compute, func_args=[3]) == {"x": 3}
    assert counter[3] == 1


def test_float32_blob(tmp_path):
    store = Float32BlobStorage(tmp_path)
    data = np.arange(12, dtype=np.float64).reshape(3, 4) / 7
    store.set('nested/blob', data)
    assert (tmp_path / 'nested' / 'blob.f32').stat().st_size == 12 * 4
    flat = store.fetch('nested/blob')
    assert flat.shape == (12,)
    back = store.fetch('nested/blob', shape=(3, 4))
    np.testing.assert_array_equal(back, data.astype(np.float32))
    assert store.keys() == ['nested/blob']
    try:
        store.fetch('nested/blob', shape=(5, 5))
    except FormatError:
        pass
    else:
        assert False


def test_float32_blob_bad_size(tmp_path):
    BinaryFileStorage(tmp_path, '.f32').set('odd', b'\x00' * 7)
    try:
        Float32BlobStorage(tmp_path).fetch('odd')
    except FormatError:
        pass
    else:
        assert False


def test_image_storage(tmp_path):
    store = ImageFileStorage(tmp_path)
    image = Image.fromarray(np.arange(64, dtype=np.uint8).reshape(8, 8))
    store.set('img', image)
    back = store.fetch('img')
    assert back.size == (8, 8)
    np.testing.assert_array_equal(np.asarray(back), np.asarray(image))
