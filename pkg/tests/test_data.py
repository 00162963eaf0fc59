import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from chad.data import (CategoricalField, ContinuousField, DataError, Dataset,
                       InsufficientAnomaliesError, Schema, SchemaDecl, UnseenEntityError,
                       build_eval_mix, decode, encode_for_test, encode_frame, fit_normalizer,
                       fit_schema, load_csv, load_dataset, normalize, read_decl, save_dataset,
                       write_decl)

from conftest import make_dataset, make_schema

DECL = SchemaDecl(["proto", "port"], ["bytes", "dur"], label="label", normal_values=["ok"])


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur\ntcp,80,10,1\nudp,53,20,2\ntcp,443,30,3\n")
    ds, rep = load_csv(p, SchemaDecl(["proto", "port"], ["bytes", "dur"]))
    assert len(ds) == 3
    assert rep.missing_dropped == 0
    assert ds.schema.k == 2 and ds.schema.r == 2


def test_empty_continuous_cell_dropped(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur\ntcp,80,10,1\nudp,53,,2\ntcp,443,30,3\n")
    ds, rep = load_csv(p, SchemaDecl(["proto", "port"], ["bytes", "dur"]))
    assert len(ds) == 2
    assert rep.missing_dropped == 1


def test_unparsable_number_dropped(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur\ntcp,80,ten,1\nudp,53,20,2\n")
    ds, rep = load_csv(p, SchemaDecl(["proto", "port"], ["bytes", "dur"]))
    assert (len(ds), rep.missing_dropped) == (1, 1)


def test_header_mismatch(tmp_path):
    p = write(tmp_path, "proto,bytes\ntcp,1\n")
    with pytest.raises(DataError, match="port"):
        load_csv(p, SchemaDecl(["proto", "port"], ["bytes"]))


def test_unreadable_and_empty(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "nope.csv", DECL)
    p = write(tmp_path, "proto,port,bytes,dur\ntcp,80,,1\n")
    with pytest.raises(DataError, match="survived"):
        load_csv(p, SchemaDecl(["proto", "port"], ["bytes", "dur"]))


def test_frequency_floor(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur\n" + "tcp,80,1,1\n" * 3 + "udp,80,1,1\n")
    decl = SchemaDecl(["proto", "port"], ["bytes", "dur"], frequency_floor=2)
    ds, rep = load_csv(p, decl)
    assert len(ds) == 3 and rep.floor_dropped == 1
    assert ds.schema.categorical[0].values == ("tcp",)


def test_loading_order_preserving(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur\nb,1,5,0\na,2,7,1\nb,1,6,2\n")
    ds, _ = load_csv(p, SchemaDecl(["proto", "port"], ["bytes", "dur"]))
    assert_array_equal(decode(ds)["proto"], ["b", "a", "b"])
    assert_allclose(decode(ds)["bytes"], [5, 7, 6])


def test_labels_loaded(tmp_path):
    p = write(tmp_path, "proto,port,bytes,dur,label\ntcp,80,1,1,ok\ntcp,80,2,1,bad\n")
    ds, _ = load_csv(p, DECL, with_labels=True)
    assert_array_equal(ds.labels, [0, 1])


def test_kdd_shaped_schema():
    rng = np.random.default_rng(0)
    arities = [3, 65, 11, 2, 2, 2]
    n = 2000
    cols = {f"c{j}": [f"e{i}" for i in np.r_[np.arange(a), rng.integers(0, a, n - a)]]
            for j, a in enumerate(arities)}
    cols.update({f"x{j}": rng.random(n) for j in range(35)})
    decl = SchemaDecl([f"c{j}" for j in range(6)], [f"x{j}" for j in range(35)])
    s = fit_schema(pd.DataFrame(cols), decl)
    assert (s.k, s.r, sum(s.arities)) == (6, 35, 85)


# -- normalizer -------------------------------------------------------------

def bare(r=1):
    return Schema((), tuple(ContinuousField(f"x{j}") for j in range(r)))


def test_normalizer_example():
    s = fit_normalizer(np.array([[2.0], [4.0], [6.0]]), bare())
    assert (s.continuous[0].min, s.continuous[0].max) == (2.0, 6.0)
    assert_allclose(normalize(np.array([[4.0]]), s), [[0.5]])


def test_normalizer_constant_field():
    s = fit_normalizer(np.array([[5.0], [5.0]]), bare())
    assert_array_equal(normalize(np.array([[5.0], [7.0]]), s), [[0.0], [0.0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_normalized_training_values_in_unit_interval(vals):
    x = np.array(vals)[:, None]
    s = fit_normalizer(x, bare())
    z = normalize(x, s, clamp=False)
    assert np.all(z >= 0) and np.all(z <= 1)
    if x.max() > x.min():
        assert_allclose(z[x.argmin()], 0.0)
        assert_allclose(z[x.argmax()], 1.0)


def test_normalize_monotone():
    s = fit_normalizer(np.array([[0.0], [10.0]]), bare())
    z = normalize(np.linspace(-5, 15, 21)[:, None], s, clamp=False)[:, 0]
    assert np.all(np.diff(z) > 0)


def test_fit_normalizer_needs_rows():
    with pytest.raises(DataError):
        fit_normalizer(np.zeros((0, 1)), bare())


# -- test-time encoding -----------------------------------------------------

@pytest.fixture
def fitted():
    df = pd.DataFrame({"proto": ["tcp", "udp"], "port": ["80", "53"], "bytes": [0.0, 10.0],
                       "dur": [1.0, 3.0]})
    return fit_schema(df, DECL)


def test_encode_max_is_one(fitted):
    rec = encode_for_test({"proto": "tcp", "port": "80", "bytes": 10.0, "dur": 1.0}, fitted)
    assert rec.cont[0] == 1.0


def test_encode_clamps_above_max(fitted):
    rec = encode_for_test({"proto": "tcp", "port": "80", "bytes": 25.0, "dur": -4.0}, fitted)
    assert_array_equal(rec.cont, [1.0, 0.0])


def test_unseen_entity_names_field(fitted):
    with pytest.raises(UnseenEntityError) as e:
        encode_for_test({"proto": "tcp", "port": "8080", "bytes": 1.0, "dur": 1.0}, fitted)
    assert e.value.field == "port"


def test_encode_frame_rejects_unseen(fitted):
    df = pd.DataFrame({"proto": ["tcp", "icmp", "udp"], "port": ["80", "80", "53"],
                       "bytes": [1.0, 2.0, 3.0], "dur": [1.0, 1.0, 1.0]})
    ds, rejected = encode_frame(df, fitted)
    assert_array_equal(rejected, [False, True, False])
    assert len(ds) == 2


def test_round_trip_decode():
    rng = np.random.default_rng(3)
    df = pd.DataFrame({"proto": rng.choice(["a", "b", "c"], 50), "port": rng.choice(["1", "2"], 50),
                       "bytes": rng.normal(size=50), "dur": rng.exponential(size=50)})
    s = fit_schema(df, DECL)
    ds, _ = encode_frame(df, s)
    back = decode(ds)
    assert_array_equal(back["proto"], df["proto"])
    assert_array_equal(back["port"], df["port"])
    assert_allclose(back["bytes"], df["bytes"], atol=1e-12)


def test_schema_invariants():
    with pytest.raises(DataError):
        Schema((CategoricalField("a", ("x",)),), (ContinuousField("a"),))
    with pytest.raises(DataError):
        Schema((CategoricalField("a", ()),), ())
    with pytest.raises(DataError):
        Schema((), (ContinuousField("x", 2.0, 1.0),))


def test_fingerprint_sensitive_to_bounds():
    a = make_schema()
    b = Schema(a.categorical, a.continuous[:-1] + (ContinuousField("x4", 0.0, 1.0 + 1e-15),))
    assert a.fingerprint() != b.fingerprint()
    assert Schema.from_dict(a.to_dict()).fingerprint() == a.fingerprint()


def test_dataset_validates_indices():
    s = make_schema((3,), 0)
    with pytest.raises(DataError):
        Dataset(s, np.array([[3]]), np.zeros((1, 0)))


# -- eval mixes -------------------------------------------------------------

def pools(n_normal=1000, n_anom=300):
    s = make_schema()
    return make_dataset(s, n_normal, 0), make_dataset(s, n_anom, 1)


def test_mix_one_to_ten():
    normal, anom = pools()
    mix = build_eval_mix(normal, anom, 0.1, 0)
    assert len(mix) == 1100 and mix.labels.sum() == 100


def test_mix_one_to_five_ratio():
    normal, anom = pools(997, 300)
    mix = build_eval_mix(normal, anom, 0.2, 0)
    n_anom = int(mix.labels.sum())
    assert n_anom == int(np.floor(0.2 * 997))
    assert abs(n_anom / 997 - 0.2) <= 1 / 997


def test_mix_deterministic():
    normal, anom = pools()
    a = build_eval_mix(normal, anom, 0.2, np.random.default_rng(9))
    b = build_eval_mix(normal, anom, 0.2, np.random.default_rng(9))
    assert_array_equal(a.cat, b.cat)
    assert_array_equal(a.labels, b.labels)


def test_mix_insufficient():
    normal, anom = pools(1000, 50)
    with pytest.raises(InsufficientAnomaliesError):
        build_eval_mix(normal, anom, 0.1, 0)


def test_mix_bad_ratio():
    normal, anom = pools()
    with pytest.raises(ValueError):
        build_eval_mix(normal, anom, 0.0, 0)


# -- files ------------------------------------------------------------------

def test_decl_round_trip(tmp_path):
    write_decl(DECL, tmp_path / "s.ini")
    back = read_decl(tmp_path / "s.ini")
    assert back == DECL


def test_decl_unknown_key(tmp_path):
    p = write(tmp_path, "[schema]\ncategorical = a\ncontinous = b\n", "s.ini")
    with pytest.raises(DataError, match="continous"):
        read_decl(p)


def test_decl_bad_format(tmp_path):
    p = write(tmp_path, "[schema]\nformat = other-2\ncategorical = a\n", "s.ini")
    with pytest.raises(DataError):
        read_decl(p)


def test_dataset_cache_round_trip(tmp_path):
    s = make_schema()
    ds = make_dataset(s, 20, labels=np.arange(20) % 2)
    save_dataset(ds, tmp_path / "d.npz")
    back = load_dataset(tmp_path / "d.npz")
    assert back.schema == s
    assert_array_equal(back.cat, ds.cat)
    assert back.cont.tobytes() == ds.cont.tobytes()
    assert_array_equal(back.labels, ds.labels)
