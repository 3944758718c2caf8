import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptact.concepts import (ConceptClass, ConceptError, ConceptSchema, DuplicateClassError, EmptyEpisodeError,
                                 EpisodeAnnotation, MissingClassError, UnknownValueError, broadcast_to_steps,
                                 encode_annotation)
from conceptact.dataset import (Dataset, DatasetVersionError, Episode, SchemaMismatchError, TruncatedArrayError,
                                load_dataset, save_dataset)

EXAMPLE = ConceptSchema.from_dict({
    "color": ["red", "green", "blue", "yellow"],
    "shape": ["cube", "cylinder", "sphere"],
    "surface": ["smooth", "rough"],
    "zone": ["A", "B", "C"],
})
EXAMPLE_CHOICE = {"color": "blue", "shape": "cube", "surface": "rough", "zone": "B"}


def test_worked_annotation_example():
    ann = encode_annotation(EXAMPLE, EXAMPLE_CHOICE)
    got = {k: v.tolist() for k, v in ann.vectors.items()}
    assert got == {"color": [0, 0, 1, 0], "shape": [1, 0, 0], "surface": [0, 1], "zone": [0, 1, 0]}


def test_smallest_schema():
    schema = ConceptSchema((ConceptClass("c", ("a", "b")),))
    assert encode_annotation(schema, {"c": "a"}).vectors["c"].tolist() == [1, 0]


def test_unknown_value_rejected():
    with pytest.raises(UnknownValueError):
        encode_annotation(EXAMPLE, {**EXAMPLE_CHOICE, "color": "purple"})


def test_missing_and_duplicate_classes():
    partial = dict(EXAMPLE_CHOICE)
    partial.pop("zone")
    with pytest.raises(MissingClassError):
        encode_annotation(EXAMPLE, partial)
    with pytest.raises(DuplicateClassError):
        encode_annotation(EXAMPLE, list(EXAMPLE_CHOICE.items()) + [("color", "red")])


def test_schema_validation():
    with pytest.raises(ConceptError):
        ConceptClass("c", ("only",))
    with pytest.raises(ConceptError):
        ConceptClass("c", ("a", "a"))
    with pytest.raises(DuplicateClassError):
        ConceptSchema((ConceptClass("c", ("a", "b")), ConceptClass("c", ("x", "y"))))


def test_broadcast_examples():
    schema = ConceptSchema((ConceptClass("c", ("a", "b")),))
    rows = broadcast_to_steps(encode_annotation(schema, {"c": "a"}), 3, schema)
    assert rows.tolist() == [[1, 0]] * 3
    one = broadcast_to_steps(encode_annotation(EXAMPLE, EXAMPLE_CHOICE), 1, EXAMPLE)
    assert one.tolist() == [[0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 1, 0]]
    with pytest.raises(EmptyEpisodeError):
        broadcast_to_steps(encode_annotation(EXAMPLE, EXAMPLE_CHOICE), 0, EXAMPLE)


@st.composite
def schema_and_choice(draw):
    n = draw(st.integers(1, 4))
    classes, chosen = [], {}
    for j in range(n):
        k = draw(st.integers(2, 5))
        classes.append(ConceptClass(f"c{j}", tuple(f"v{i}" for i in range(k))))
        chosen[f"c{j}"] = f"v{draw(st.integers(0, k - 1))}"
    return ConceptSchema(tuple(classes)), chosen


@settings(max_examples=60, deadline=None)
@given(schema_and_choice(), st.integers(1, 20))
def test_annotation_properties(sc, T):
    schema, chosen = sc
    ann = encode_annotation(schema, chosen)
    ann.validate(schema)
    for c in schema.classes:
        v = ann.vectors[c.name]
        assert v.sum() == 1 and set(np.unique(v)) <= {0, 1}
    rows = broadcast_to_steps(ann, T, schema)
    assert rows.shape == (T, schema.total_width)
    assert (rows == rows[0]).all()
    assert ann.values(schema) == chosen


def test_annotation_validation_detects_non_one_hot():
    schema = ConceptSchema((ConceptClass("c", ("a", "b")),))
    with pytest.raises(ConceptError):
        EpisodeAnnotation({"c": np.array([1, 1])}).validate(schema)


# -- dataset files ------------------------------------------------------------

def make_dataset(n_eps=1, T=2, cams=2, H=4, seed=0):
    rng = np.random.default_rng(seed)
    schema = ConceptSchema((ConceptClass("c", ("a", "b")), ConceptClass("d", ("x", "y", "z"))))
    eps = []
    for i in range(n_eps):
        ann = encode_annotation(schema, {"c": "ab"[i % 2], "d": "xyz"[i % 3]})
        eps.append(Episode(rng.standard_normal((T, 4)).astype(np.float32),
                           rng.standard_normal((T, 4)).astype(np.float32),
                           rng.integers(0, 256, (T, cams, H, H, 3), dtype=np.uint8), ann, f"sc{i}", {"i": i}))
    return Dataset(schema, eps, "sorting")


def assert_same(a: Dataset, b: Dataset):
    assert a.schema == b.schema and a.task == b.task and len(a) == len(b)
    for x, y in zip(a.episodes, b.episodes):
        assert x.proprio.tobytes() == y.proprio.tobytes()
        assert x.actions.tobytes() == y.actions.tobytes()
        assert x.images.tobytes() == y.images.tobytes()
        assert x.annotation == y.annotation and x.scenario_id == y.scenario_id


def test_roundtrip_small(tmp_path):
    ds = make_dataset()
    assert_same(ds, load_dataset(save_dataset(ds, tmp_path / "d")))


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2), st.integers(0, 99))
def test_roundtrip_property(tmp_path_factory, n, T, cams, seed):
    ds = make_dataset(n, T, cams, seed=seed)
    path = tmp_path_factory.mktemp("ds")
    assert_same(ds, load_dataset(save_dataset(ds, path)))


def test_manifest_layout(tmp_path):
    import json
    save_dataset(make_dataset(2), tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert {"version", "schema", "episodes", "dims"} <= set(m)
    assert m["dims"] == {"d_s": 4, "d_a": 4, "H": 4, "W": 4, "cameras": 2}
    assert sorted(p.name for p in (tmp_path / "ep_00000").iterdir()) == \
        ["actions.f32", "cam0.u8", "cam1.u8", "meta.json", "proprio.f32"]
    raw = (tmp_path / "ep_00000" / "proprio.f32").read_bytes()
    assert np.frombuffer(raw, "<f4").reshape(2, 4).tolist() == make_dataset(2).episodes[0].proprio.tolist()


def test_unknown_version(tmp_path):
    import json
    save_dataset(make_dataset(), tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["version"] = "v999"
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetVersionError):
        load_dataset(tmp_path)


def test_truncated_array(tmp_path):
    save_dataset(make_dataset(), tmp_path)
    f = tmp_path / "ep_00000" / "actions.f32"
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(TruncatedArrayError):
        load_dataset(tmp_path)


def test_schema_mismatch_on_save():
    ds = make_dataset()
    ds.episodes[0].annotation.vectors.pop("d")
    with pytest.raises(SchemaMismatchError):
        ds.validate()
