import enum
from dataclasses import dataclass

import pytest
from hypothesis import given
from hypothesis import strategies as st

from recomp import canonical
from recomp.svi import Classification, ClinVarEntry, Status, Variant


def test_sets_encode_independently_of_insertion_order():
    a = frozenset(["b", "a", "c"])
    b = frozenset(["c", "b", "a"])
    assert canonical.dumps(a) == canonical.dumps(b)
    assert canonical.value_hash({"x": 1, "y": 2}) == canonical.value_hash({"y": 2, "x": 1})


def test_registered_types_round_trip():
    value = {
        "classes": frozenset({(Variant("1", "G"), Classification.RED)}),
        "entry": ClinVarEntry("G", Status.BENIGN, "benign"),
        "pair": (1, "a"),
        "plain": [1, 2.5, None, True],
    }
    back = canonical.loads(canonical.dumps(value))
    assert back == value
    assert type(back["entry"].status) is Status


def test_unregistered_types_are_rejected():
    @dataclass(frozen=True)
    class Loose:
        x: int

    with pytest.raises(TypeError):
        canonical.dumps(Loose(1))
    with pytest.raises(TypeError):
        canonical.dumps(object())
    with pytest.raises(TypeError):
        canonical.register(int)


def test_unknown_tag_on_decode():
    with pytest.raises(ValueError):
        canonical.loads(b'{"@c": "Nowhere", "f": {}}')
    with pytest.raises(ValueError):
        canonical.loads(b'{"odd": 1}')


def test_enum_registration():
    @canonical.register
    class Colour(enum.Enum):
        BLUE = "blue"

    assert canonical.loads(canonical.dumps(Colour.BLUE)) is Colour.BLUE


values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=5),
    lambda inner: st.one_of(
        st.lists(inner, max_size=4).map(tuple),
        st.dictionaries(st.text(max_size=3), inner, max_size=4),
        st.frozensets(st.text(max_size=3) | st.integers(), max_size=4),
    ),
    max_leaves=12,
)


@given(values)
def test_property_round_trip_and_stable_hash(v):
    data = canonical.dumps(v)
    assert canonical.loads(data) == v
    assert canonical.dumps(canonical.loads(data)) == data
