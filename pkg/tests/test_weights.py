import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stochtraffic import weights


def test_layout():
    blob = weights.dumps({"w": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"TGSM"
    assert struct.unpack_from("<II", blob, 4) == (1, 1)
    assert struct.unpack_from("<I", blob, 12) == (1,)
    assert blob[16:17] == b"w"
    assert struct.unpack_from("<IQQ", blob, 17) == (2, 1, 2)
    assert struct.unpack_from("<2d", blob, 37) == (1.0, 2.0)


arrays = st.dictionaries(
    st.text(min_size=1, max_size=8),
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
               elements=st.floats(allow_nan=True, allow_infinity=True, width=64)),
    max_size=4,
)


@settings(max_examples=200, deadline=None)
@given(arrays)
def test_roundtrip_bit_exact(a):
    back, meta = weights.loads(weights.dumps(a, {"k": 1}))
    assert list(back) == list(a) and meta == {"k": 1}
    for name in a:
        assert back[name].shape == a[name].shape
        assert back[name].tobytes() == np.ascontiguousarray(a[name]).tobytes()


def test_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = {"layer.weight": rng.normal(size=(3, 4)), "layer.bias": rng.normal(size=3), "scalar": np.array(2.5)}
    p = tmp_path / "w.tgsm"
    weights.save(p, a, {"iterations": 5})
    b, meta = weights.load(p)
    assert all(np.array_equal(a[k], b[k]) for k in a) and meta["iterations"] == 5
    weights.save(tmp_path / "w2.tgsm", b, meta)
    assert (tmp_path / "w2.tgsm").read_bytes() == p.read_bytes()


@pytest.mark.parametrize("blob", [b"NOPE", b"TGSM" + struct.pack("<II", 2, 0), b"TGSM" + struct.pack("<II", 1, 1)])
def test_bad_containers(blob):
    with pytest.raises(weights.WeightFileError):
        weights.loads(blob)


def test_truncated_data():
    blob = weights.dumps({"w": np.ones(10)})
    with pytest.raises(weights.WeightFileError):
        weights.loads(blob[:40])
