import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmcphase.grids import WeightedGridFunction
from cmcphase.io import config_digest, dumps, fmt, write_csv


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


@given(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=False, allow_infinity=False),
                       max_size=6))
def test_dumps_is_canonical(d):
    text = dumps(d)
    assert json.loads(text) == d
    assert dumps(dict(reversed(list(d.items())))) == text


def test_digest_ignores_key_order():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})


def test_csv_has_17_digits(tmp_path):
    write_csv(tmp_path / "x.csv", ["a"], [[1 / 3]])
    assert open(tmp_path / "x.csv").read().splitlines()[1] == "0.33333333333333331"


def test_weighted_norms():
    s = np.linspace(0, 1, 3)
    t = np.array([-1.0, 0.0, 1.0])
    g = WeightedGridFunction(values=np.ones((3, 3)), axes=("s", "t"), coords={"s": s, "t": t},
                             a=1.0, gamma=2.0, periodic=())
    assert g.weighted_sup() == pytest.approx(np.e * np.cosh(1.0) ** 2)
    assert g.weighted_sup(a=0.0, gamma=0.0) == 1.0
    assert g.weighted_holder(0.25, a=0.0, gamma=0.0) == 1.0
    with pytest.raises(ValueError):
        WeightedGridFunction(values=np.ones((2, 3)), axes=("s", "t"), coords={"s": s, "t": t})
