import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_ai.data import (
    Budget,
    BurnInPlan,
    Dataset,
    EstimandSpec,
    load_csv,
    split_burn_in,
    write_csv,
)
from robust_ai.errors import (
    BurnInTooLarge,
    ConfigError,
    DataError,
    MissingColumn,
    ParseError,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_csv(tmp_path):
    d = load_csv(_write(tmp_path, "x1,f,y\n0.1,0.5,1\n0.2,0.4,0\n0.3,0.6,1\n"))
    assert d.n == 3 and d.d == 1
    np.testing.assert_array_equal(d.labels, [1, 0, 1])
    np.testing.assert_array_equal(d.row_ids, [0, 1, 2])


def test_blank_label_is_unobserved(tmp_path):
    d = load_csv(_write(tmp_path, "x1,f,y\n0.1,0.5,1\n0.2,0.4,\n"))
    np.testing.assert_array_equal(d.observed, [True, False])
    assert np.isnan(d.labels[1])
    assert not d.fully_labeled


def test_confidence_column(tmp_path):
    d = load_csv(_write(tmp_path, "x1,f,y,conf\n0,0.5,1,0.97\n1,0.4,0,0.50\n"))
    np.testing.assert_allclose(d.confidence, [0.97, 0.5])


def test_confidence_out_of_range(tmp_path):
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, "x1,f,y,conf\n0,0.5,1,1.5\n"))


def test_missing_prediction_column(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(_write(tmp_path, "x1,y\n0,1\n"))


def test_unparseable_cell(tmp_path):
    with pytest.raises(ParseError):
        load_csv(_write(tmp_path, "x1,f,y\n0,abc,1\n"))


def test_ehat2_clamped(tmp_path):
    d = load_csv(_write(tmp_path, "x1,f,y,ehat2\n0,0.5,1,-0.2\n1,0.5,1,0.3\n"))
    np.testing.assert_array_equal(d.ehat2, [0.0, 0.3])


def test_custom_schema(tmp_path):
    p = _write(tmp_path, "age,pred,label\n30,0.2,1\n40,0.7,0\n")
    d = load_csv(p, {"features": ["age"], "prediction": "pred", "label": "label"})
    assert d.feature_names == ("age",)
    np.testing.assert_array_equal(d.predictions, [0.2, 0.7])


def test_bundled_survey_csv_matches_schema():
    from importlib.resources import files

    d = load_csv(files("robust_ai") / "datasets" / "survey_synthetic.csv")
    assert d.n == 100 and d.d == 2
    assert d.fully_labeled and d.confidence is not None
    assert set(np.unique(d.labels)) <= {0.0, 1.0}


def test_budget_validation():
    assert Budget(5, 10).rate == 0.5
    with pytest.raises(ConfigError):
        Budget(0, 10)
    with pytest.raises(ConfigError):
        Budget(11, 10)


def test_estimand_aliases_and_design():
    spec = EstimandSpec("linreg", 1)
    assert spec.kind == "linear_regression"
    X = spec.design(np.array([[2.0], [3.0]]))
    np.testing.assert_array_equal(X, [[1, 2], [1, 3]])
    assert EstimandSpec("mean").design(np.zeros((3, 2))).shape == (3, 1)
    with pytest.raises(ConfigError):
        EstimandSpec("median")


def test_logistic_needs_binary_labels():
    d = Dataset(np.zeros((3, 1)), [0.5, 0.5, 0.5], [0.2, 1, 0], [True] * 3)
    with pytest.raises(DataError):
        d.check_estimand(EstimandSpec("logreg"))


def _toy(n):
    return Dataset(np.arange(n, dtype=float), np.zeros(n), np.ones(n), np.ones(n, dtype=bool))


def test_burn_in_edge_sizes():
    d = _toy(10)
    b, r = split_burn_in(d, BurnInPlan(0, 1))
    assert b.size == 0 and r.tolist() == list(range(10))
    b, r = split_burn_in(d, BurnInPlan(10, 1))
    assert b.tolist() == list(range(10)) and r.size == 0


def test_burn_in_deterministic():
    d = _toy(10)
    a = split_burn_in(d, BurnInPlan(5, 3))
    b = split_burn_in(d, BurnInPlan(5, 3))
    np.testing.assert_array_equal(a[0], b[0])


def test_burn_in_exceeding_budget():
    with pytest.raises(BurnInTooLarge):
        BurnInPlan(6).check(Budget(5, 10))
    with pytest.raises(BurnInTooLarge):
        split_burn_in(_toy(4), BurnInPlan(5))


@given(st.integers(1, 60), st.data())
def test_burn_in_partitions(n, data):
    size = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 2**32))
    b, r = split_burn_in(_toy(n), BurnInPlan(size, seed))
    assert b.size == size
    assert np.intersect1d(b, r).size == 0
    np.testing.assert_array_equal(np.union1d(b, r), np.arange(n))


floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(floats, floats, floats, st.booleans()), min_size=1, max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    x, f, y, obs = map(np.array, zip(*rows))
    d = Dataset(x[:, None], f, np.where(obs, y, np.nan), obs.astype(bool))
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, p)
    back = load_csv(p)
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.predictions, d.predictions)
    np.testing.assert_array_equal(back.observed, d.observed)
    np.testing.assert_array_equal(back.labels[back.observed], d.labels[d.observed])
    np.testing.assert_array_equal(back.row_ids, d.row_ids)
