import io

import numpy as np
import pytest

from sephrnet.autodiff import read_labels, read_tensor, write_labels, write_tensor
from sephrnet.exceptions import FormatError


def test_tensor_round_trip_is_bit_exact(rng):
    for shape in [(), (3,), (2, 3, 4)]:
        a = rng.normal(size=shape)
        buf = io.BytesIO()
        write_tensor(buf, a)
        buf.seek(0)
        b = read_tensor(buf)
        assert b.shape == a.shape and b.tobytes() == np.asarray(a, "<f8").tobytes()


def test_label_record_layout():
    buf = io.BytesIO()
    write_labels(buf, np.array([[1, 2]]))
    raw = buf.getvalue()
    assert raw[:4] == (2).to_bytes(4, "little")
    assert len(raw) == 4 + 16 + 16
    buf.seek(0)
    np.testing.assert_array_equal(read_labels(buf), [[1, 2]])


def test_truncated_record_raises(rng):
    buf = io.BytesIO()
    write_tensor(buf, rng.normal(size=(4, 4)))
    with pytest.raises(FormatError, match="truncated"):
        read_tensor(io.BytesIO(buf.getvalue()[:-3]))
