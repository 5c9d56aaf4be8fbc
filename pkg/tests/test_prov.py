import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recomp import prov
from recomp.prov import (
    BLACK_BOX,
    ProvActivity,
    ProvDocument,
    ProvEntity,
    UsageStatement,
    assert_usage,
    query_usages,
    validate,
)


def svi_document() -> ProvDocument:
    """The four entities and four usages asserted for one SVI execution."""
    doc = ProvDocument()
    for e in (
        ProvEntity("om", {"prov:type": "OMIM", "version": "omim@1"}),
        ProvEntity("ph", {"prov:type": "prov:collection"}, is_collection=True),
        ProvEntity("cv", {"prov:type": "CV", "version": "clinvar@1"}),
        ProvEntity("vars", {"prov:type": "prov:collection"}, is_collection=True),
    ):
        doc = doc.with_entity(e)
    doc = doc.with_activity(ProvActivity("PtG", 0, 0)).with_activity(ProvActivity("vClass", 1, 1))
    doc = assert_usage(doc, "PtG", "om", "dep")
    doc = assert_usage(doc, "PtG", "ph", "input")
    doc = assert_usage(doc, "vClass", "cv", "dep")
    doc = assert_usage(doc, "vClass", "vars", "input")
    return doc


def test_assert_usage_adds_statement():
    doc = svi_document()
    assert UsageStatement("PtG", "om", "dep", None) in doc.usages
    assert len(doc.entities) + len(doc.usages) == 8


def test_assert_usage_is_idempotent():
    doc = svi_document()
    again = assert_usage(doc, "PtG", "om", "dep")
    assert again == doc
    assert again is doc


def test_assert_usage_rejects_element_keys_on_black_box():
    doc = ProvDocument(granularity=BLACK_BOX)
    doc = doc.with_entity(ProvEntity("cv")).with_activity(ProvActivity("SVI", 0, 0))
    with pytest.raises(prov.GranularityError):
        assert_usage(doc, "SVI", "cv", "dep", {"227083249"})


def test_assert_usage_unknown_ids():
    doc = svi_document()
    with pytest.raises(prov.UnknownIdError):
        assert_usage(doc, "nope", "om", "dep")
    with pytest.raises(prov.UnknownIdError):
        assert_usage(doc, "PtG", "nope", "dep")


def test_assert_usage_bad_role():
    with pytest.raises(prov.ProvError):
        assert_usage(svi_document(), "PtG", "om", "output")


def test_validate_svi_document_is_clean():
    assert validate(svi_document()) == []


def test_validate_empty_document():
    assert validate(ProvDocument()) == []


def test_validate_reports_undeclared_entity():
    doc = svi_document()
    broken = dataclasses.replace(doc, usages=doc.usages + (UsageStatement("PtG", "ghost", "input"),))
    problems = validate(broken)
    assert len(problems) == 1
    assert "ghost" in problems[0]


def test_validate_catches_structural_violations():
    doc = ProvDocument(
        entities=(ProvEntity("a", {"version": "not-a-ref"}), ProvEntity("a")),
        activities=(ProvActivity("x", 0, 5), ProvActivity("y", 0, 1), ProvActivity("z", 1, 0)),
        usages=(UsageStatement("x", "a", "sideways"),),
        granularity=BLACK_BOX,
    )
    text = "\n".join(validate(doc))
    for needle in ("duplicate entity", "malformed version", "step_index 0", "invalid role",
                   "expected one", "started before"):
        assert needle in text


def test_query_by_role_and_entity():
    hits = query_usages(svi_document(), role="dep", entity_id="cv")
    assert [(u.activity_id, u.entity_id, u.role) for u, _ in hits] == [("vClass", "cv", "dep")]


def test_query_matching_nothing():
    assert query_usages(svi_document(), entity_id="missing") == []


def test_query_orders_by_step_index():
    doc = ProvDocument()
    doc = doc.with_entity(ProvEntity("d"))
    doc = doc.with_activity(ProvActivity("late", 1, 1)).with_activity(ProvActivity("early", 0, 0))
    doc = assert_usage(doc, "late", "d", "dep")
    doc = assert_usage(doc, "early", "d", "dep")
    assert [a.step_index for _, a in query_usages(doc, role="dep")] == [0, 1]


def test_query_element_keys_coarse_matches_anything():
    doc = ProvDocument().with_entity(ProvEntity("d")).with_entity(ProvEntity("e"))
    doc = doc.with_activity(ProvActivity("s", 0, 0))
    doc = assert_usage(doc, "s", "d", "dep", {"k1", "k2"})
    doc = assert_usage(doc, "s", "e", "dep")
    hits = query_usages(doc, element_keys_intersecting={"zzz"})
    assert [u.entity_id for u, _ in hits] == ["e"]
    hits = query_usages(doc, element_keys_intersecting={"k2"})
    assert sorted(u.entity_id for u, _ in hits) == ["d", "e"]


def test_round_trip_svi_and_empty():
    for doc in (svi_document(), ProvDocument()):
        assert prov.deserialize(prov.serialize(doc)) == doc


def test_serialize_refuses_invalid():
    doc = svi_document()
    broken = dataclasses.replace(doc, usages=(UsageStatement("PtG", "ghost", "input"),))
    with pytest.raises(prov.ProvError):
        prov.serialize(broken)


@pytest.mark.parametrize("cut", [1, 10, 57, 200, -2])
def test_truncated_stream_is_a_parse_error(cut):
    data = prov.serialize(svi_document())
    with pytest.raises(prov.ProvParseError) as info:
        prov.deserialize(data[:cut])
    assert info.value.line >= 1


def test_wrong_shape_is_a_parse_error():
    with pytest.raises(prov.ProvParseError):
        prov.deserialize(b'{"entities": 3}')
    with pytest.raises(prov.ProvParseError):
        prov.deserialize(b"[]")


# -- properties ------------------------------------------------------------------

ids = st.text(alphabet="abcdefgh", min_size=1, max_size=4)
keys = st.frozensets(st.text(alphabet="0123456789", min_size=1, max_size=3), min_size=1, max_size=4)


@st.composite
def documents(draw):
    granularity = draw(st.sampled_from([prov.WHITE_BOX, BLACK_BOX]))
    entity_ids = draw(st.lists(ids, min_size=1, max_size=5, unique=True))
    n_acts = 1 if granularity == BLACK_BOX else draw(st.integers(1, 4))
    doc = ProvDocument(granularity=granularity)
    for e in entity_ids:
        attrs = draw(st.dictionaries(st.sampled_from(["prov:type", "dataset"]), ids, max_size=2))
        doc = doc.with_entity(ProvEntity(e, attrs, draw(st.booleans())))
    for j in range(n_acts):
        doc = doc.with_activity(ProvActivity(f"s{j}", j, j))
    for _ in range(draw(st.integers(0, 8))):
        a = f"s{draw(st.integers(0, n_acts - 1))}"
        e = draw(st.sampled_from(entity_ids))
        role = draw(st.sampled_from(prov.ROLES))
        k = None if granularity == BLACK_BOX else draw(st.none() | keys)
        doc = assert_usage(doc, a, e, role, k)
    return doc


@settings(max_examples=200)
@given(documents())
def test_property_round_trip(doc):
    assert validate(doc) == []
    assert prov.deserialize(prov.serialize(doc)) == doc


@settings(max_examples=200)
@given(documents())
def test_property_empty_filter_returns_every_usage_once(doc):
    hits = query_usages(doc)
    assert sorted(map(repr, (u for u, _ in hits))) == sorted(map(repr, doc.usages))
    steps = [a.step_index for _, a in hits]
    assert steps == sorted(steps)


@settings(max_examples=200)
@given(documents(), keys)
def test_property_black_box_never_narrower(doc, probe):
    if doc.granularity == BLACK_BOX:
        assert len(query_usages(doc, element_keys_intersecting=probe)) == len(doc.usages)
