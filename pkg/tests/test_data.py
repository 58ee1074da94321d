import numpy as np
import pytest
from hypothesis import given, strategies as st

from kinrisk import (CsvSchema, Dataset, IdentifiabilityError, MendelianRules, ParseError,
                     RelativeRecord, ValidationError, assign_carrier_probability, parse_relatives,
                     stratum_mask, write_relatives)

HEADER = "family_id,relative_id,y,delta,p_carrier,w_male,z_proband_male\n"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_three_rows_echo(tmp_path):
    p = write(tmp_path, HEADER + "A,1,61.5,1,0.51,1,0\nA,2,70,0,0.02,0,0\nB,1,55,1,1,1,1\n")
    d = parse_relatives(p)
    assert d.n == 3
    assert list(d.family_id) == ["A", "A", "B"]
    np.testing.assert_array_equal(d.y, [61.5, 70.0, 55.0])
    np.testing.assert_array_equal(d.delta, [1, 0, 1])
    np.testing.assert_array_equal(d.probs, [0.51, 0.02, 1.0])
    assert d.w_names == ("male",) and d.z_names == ("proband_male",)
    np.testing.assert_array_equal(d.w[:, 0], [1, 0, 1])
    np.testing.assert_array_equal(d.weight, [1, 1, 1])
    assert d.report.n_dropped == 0


def test_probability_out_of_range_names_row(tmp_path):
    p = write(tmp_path, HEADER + "A,1,61.5,1,0.51,1,0\nA,2,70,0,1.5,0,0\n")
    with pytest.raises(ValidationError, match="row 2"):
        parse_relatives(p)


def test_missing_y_dropped_and_reported(tmp_path):
    rows = ["A,1,61,1,0.51,1,0", "A,2,,0,0.02,0,0", "A,3,50,1,0.51,0,0",
            "B,1,NA,1,1,1,1", "B,2,44,0,0,1,1"]
    d = parse_relatives(write(tmp_path, HEADER + "\n".join(rows) + "\n"))
    assert d.n == 3
    assert d.report.n_dropped == 2
    assert "dropped: 2" in d.report.text()
    assert [r for r, _ in d.report.dropped] == [2, 4]


def test_malformed_number_is_parse_error_with_row(tmp_path):
    p = write(tmp_path, HEADER + "A,1,61,1,0.51,1,0\nA,2,seventy,0,0.02,0,0\n")
    with pytest.raises(ParseError) as exc:
        parse_relatives(p)
    assert exc.value.row == 2
    assert "row 2" in str(exc.value)


def test_empty_after_filtering(tmp_path):
    with pytest.raises(ValidationError, match="empty"):
        parse_relatives(write(tmp_path, HEADER + "A,1,,1,0.51,1,0\n"))


def test_missing_required_column(tmp_path):
    with pytest.raises(ValidationError, match="delta"):
        parse_relatives(write(tmp_path, "family_id,y,p_carrier\nA,50,0.5\n"))


def test_genotype_columns_assign_probabilities(tmp_path):
    text = ("family_id,relative_id,y,delta,genotype,relation,proband_genotype\n"
            "A,1,60,1,NA,child,het_carrier\n"
            "A,2,62,0,,sibling,noncarrier\n"
            "A,3,64,0,1,parent,noncarrier\n"
            "B,1,40,1,,child,hom_carrier\n")
    d = parse_relatives(write(tmp_path, text), CsvSchema(prevalence=0.02))
    np.testing.assert_allclose(d.probs, [0.51, 0.02, 1.0, 1.0])


def test_exclude_probands(tmp_path):
    text = HEADER.rstrip("\n") + ",is_proband\n" + "A,0,70,1,1,1,0,1\nA,1,60,1,0.51,1,0,0\n"
    d = parse_relatives(write(tmp_path, text), exclude_probands=True)
    assert d.n == 1 and d.report.dropped == [(1, "proband excluded")]
    assert parse_relatives(write(tmp_path, text, "e.csv")).n == 2


def test_two_gene_columns(tmp_path):
    text = ("family_id,relative_id,y,delta,p00,p01,p10,p11\n"
            "A,1,60,1,0.25,0.25,0.25,0.25\nA,2,50,0,0.5,0,0.5,0\n")
    d = parse_relatives(write(tmp_path, text))
    assert d.two_gene and d.probs.shape == (2, 4)
    np.testing.assert_allclose(d.carrier_prior, [0.5, 0.5])
    bad = text.replace("0.5,0,0.5,0", "0.5,0,0.6,0")
    with pytest.raises(ValidationError, match="row 2"):
        parse_relatives(write(tmp_path, bad, "bad.csv"))


# -- Mendelian rules ----------------------------------------------------------


def test_child_of_het_carrier():
    assert assign_carrier_probability("child", "het_carrier", None,
                                      MendelianRules(0.02)) == pytest.approx(0.51, abs=1e-15)


def test_child_of_hom_carrier_parent():
    assert assign_carrier_probability("child", "hom_carrier", None, MendelianRules(0.02)) == 1.0


@pytest.mark.parametrize("relation", ["parent", "sibling", "child"])
def test_observed_genotype_dominates(relation):
    for pg in ("noncarrier", "het_carrier", "hom_carrier"):
        assert assign_carrier_probability(relation, pg, 1, MendelianRules(0.02)) == 1.0
        assert assign_carrier_probability(relation, pg, 0, MendelianRules(0.02)) == 0.0


def test_child_of_noncarrier():
    assert assign_carrier_probability("child", "noncarrier", None, MendelianRules(0.02)) == 0.02


def test_unknown_relation():
    with pytest.raises(ValidationError, match="relation"):
        assign_carrier_probability("cousin", "het_carrier")


def test_prevalence_bounds():
    with pytest.raises(ValidationError):
        MendelianRules(1.0)


@given(st.sampled_from(["parent", "sibling", "child"]),
       st.sampled_from(["noncarrier", "het_carrier", "hom_carrier", "0", "1", "2"]),
       st.floats(0, 0.999))
def test_probability_in_unit_interval(relation, pg, c):
    v = assign_carrier_probability(relation, pg, None, MendelianRules(c))
    assert 0.0 <= v <= 1.0


@pytest.mark.parametrize("relation", ["parent", "sibling", "child"])
def test_zero_prevalence_het_is_half(relation):
    assert assign_carrier_probability(relation, "het_carrier", None, MendelianRules(0.0)) == 0.5


# -- Dataset invariants ---------------------------------------------------------


def test_record_validation():
    with pytest.raises(ValidationError):
        RelativeRecord("A", "1", -1.0, 1, 0.5)
    with pytest.raises(ValidationError):
        RelativeRecord("A", "1", 1.0, 2, 0.5)
    with pytest.raises(ValidationError):
        RelativeRecord("A", "1", 1.0, 1, 0.5, weight=0.0)
    with pytest.raises(ValidationError):
        RelativeRecord("A", "1", 1.0, 1, (0.5, 0.5, 0.1, 0.0))


def test_duplicate_keys_rejected():
    with pytest.raises(ValidationError, match="unique"):
        Dataset(["A", "A"], ["1", "1"], [1, 2], [1, 0], [0.5, 0], np.zeros((2, 0)),
                np.zeros((2, 0)))


def test_mixed_covariate_lengths_rejected():
    recs = [RelativeRecord("A", "1", 50, 1, 0.5, (1.0,)), RelativeRecord("A", "2", 50, 1, 0.5)]
    with pytest.raises(ValidationError, match="same length"):
        Dataset.from_records(recs)


def test_identifiability_rule():
    d = Dataset(["A", "B"], ["1", "1"], [50, 60], [1, 0], [0.5, 0.5], [], [])
    with pytest.raises(IdentifiabilityError, match="two distinct"):
        d.check_identifiable()
    Dataset(["A", "B"], ["1", "1"], [50, 60], [1, 0], [0.0, 1.0], [], []).check_identifiable()


def test_dataset_is_read_only():
    d = Dataset(["A"], ["1"], [50], [1], [0.5], [], [])
    with pytest.raises(ValueError):
        d.y[0] = 3.0


def test_stratum_mask_forms(rng):
    from conftest import random_dataset
    d = random_dataset(rng, 10)
    np.testing.assert_array_equal(stratum_mask(d, None), np.ones(10, bool))
    m = stratum_mask(d, lambda r: r.w[0] > 0)
    np.testing.assert_array_equal(m, d.w[:, 0] > 0)
    with pytest.raises(ValidationError):
        stratum_mask(d, np.ones(3, bool))


finite_pos = st.floats(1e-3, 150, allow_nan=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 12))
    y = draw(st.lists(finite_pos, min_size=n, max_size=n))
    delta = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    p = draw(st.lists(st.sampled_from([0.0, 0.02, 0.51, 1.0, 1 / 3]), min_size=n, max_size=n))
    w = draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=n, max_size=n))
    wt = draw(st.lists(st.floats(1e-3, 1e3), min_size=n, max_size=n))
    fam = [f"F{i // 3}" for i in range(n)]
    return Dataset(fam, [str(i) for i in range(n)], y, delta, p, np.array(w)[:, None],
                   np.zeros((n, 0)), wt, ("sex",), ())


@given(datasets())
def test_csv_round_trip_bit_exact(tmp_path_factory, d):
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_relatives(d, path)
    back = parse_relatives(path)
    assert back == d
    write_relatives(back, path.with_name("e.csv"))
    assert path.read_bytes() == path.with_name("e.csv").read_bytes()


@given(datasets())
def test_distinct_probs_match_records(d):
    assert d.distinct_probs == sorted({r.config_probs for r in d.records})
