import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cspnma.errors import MalformedStudy, NonPsdStudy
from cspnma.ingest import full_block, load_arms_binary, load_contrasts, write_contrasts
from cspnma.simulate import random_network, rebaseline


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


HEAD = "study,treat_a,treat_b,effect,se\n"
COV = "study,pair1_a,pair1_b,pair2_a,pair2_b,cov\n"
ARMS = "study,treatment,events,total\n"


def test_two_rows_two_studies(tmp_path):
    net = load_contrasts(write(tmp_path / "c.csv", HEAD + "S1,A,B,0.5,1\nS2,A,B,0.1,0.5\n"))
    assert net.labels == ("A", "B") and len(net.studies) == 2


def test_three_arm_basic_with_cov(tmp_path):
    c = write(tmp_path / "c.csv", HEAD + "S,A,B,0.5,1\nS,A,C,0.2,2\n")
    v = write(tmp_path / "v.csv", COV + "S,A,B,A,C,0.3\n")
    (sb,) = load_contrasts(c, v).studies
    assert sb.baseline == "A" and sb.cov.tolist() == [[1.0, 0.3], [0.3, 4.0]]


def test_cov_orientation_is_normalized(tmp_path):
    c = write(tmp_path / "c.csv", HEAD + "S,B,A,-0.5,1\nS,A,C,0.2,1\n")
    v = write(tmp_path / "v.csv", COV + "S,C,A,A,B,-0.3\n")
    (sb,) = load_contrasts(c, v).studies
    # Cov(C->A, A->B) = -0.3 is Cov(A->B, A->C) = 0.3
    assert sb.contrasts == (("A", "B"), ("A", "C"))
    assert sb.effects.tolist() == [0.5, 0.2]
    assert sb.cov[0, 1] == 0.3


def test_reversed_rows_load_identically(tmp_path):
    a = load_contrasts(write(tmp_path / "a.csv", HEAD + "S1,A,B,0.5,1\nS2,B,C,0.25,1\n"))
    b = load_contrasts(write(tmp_path / "b.csv", HEAD + "S1,B,A,-0.5,1\nS2,C,B,-0.25,1\n"))
    assert all(x.same_data(y) for x, y in zip(a.studies, b.studies))


def test_non_psd_block(tmp_path):
    c = write(tmp_path / "c.csv", HEAD + "S,A,B,0,1\nS,A,C,0,1\n")
    v = write(tmp_path / "v.csv", COV + "S,A,B,A,C,1.5\n")
    with pytest.raises(NonPsdStudy):
        load_contrasts(c, v)


def test_missing_cov_strict_and_recoverable(tmp_path, caplog):
    c = write(tmp_path / "c.csv", HEAD + "S,A,B,0.1,1\nS,A,C,0.2,1\n")
    with pytest.raises(MalformedStudy):
        load_contrasts(c)
    # basic contrasts alone do not determine the arm variances, even leniently
    with pytest.raises(MalformedStudy):
        load_contrasts(c, strict=False)
    # all three pairs with arm variances 0.3, 0.5, 0.2 give variances 0.8, 0.5, 0.7
    full = write(tmp_path / "f.csv", HEAD + f"S,A,B,0.1,{math.sqrt(0.8)}\nS,A,C,0.2,{math.sqrt(0.5)}\nS,B,C,0.1,{math.sqrt(0.7)}\n")
    with pytest.raises(MalformedStudy):
        load_contrasts(full)
    (sb,) = load_contrasts(full, strict=False).studies
    assert sb.cov[0, 1] == pytest.approx(0.3) and sb.cov[0, 2] == pytest.approx(-0.5) and sb.cov[1, 2] == pytest.approx(0.2)
    assert "reconstructed" in caplog.text


@pytest.mark.parametrize(
    "contrasts,cov",
    [
        (HEAD + "S,A,B,0,1\nS,B,A,0,1\n", None),
        (HEAD + "S,A,A,0,1\n", None),
        (HEAD + "S,A,B,0,0\n", None),
        (HEAD + "S,A,B,x,1\n", None),
        ("study,a,b,effect,se\nS,A,B,0,1\n", None),
        (HEAD + "S,A,B,0,1\nS,A,C,0,1\n", COV + "S,A,B,A,D,0.1\n"),
        (HEAD + "S,A,B,0,1\nS,A,C,0,1\n", COV + "T,A,B,A,C,0.1\n"),
        (HEAD + "S,A,B,0,1\nS,A,C,0,1\n", COV + "S,A,B,A,C,0.1\nS,A,C,A,B,0.1\n"),
    ],
)
def test_malformed_inputs(tmp_path, contrasts, cov):
    c = write(tmp_path / "c.csv", contrasts)
    v = write(tmp_path / "v.csv", cov) if cov else None
    with pytest.raises(MalformedStudy):
        load_contrasts(c, v)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("rt")
    net = random_network(np.random.default_rng(seed), arm_sizes=(2, 3, 4))
    write_contrasts(net, d / "c.csv", d / "v.csv")
    back = load_contrasts(d / "c.csv", d / "v.csv")
    assert back.labels == net.labels
    for x, y in zip(net.studies, back.studies):
        assert x.study_id == y.study_id and x.contrasts == y.contrasts and x.baseline == y.baseline
        assert np.array_equal(x.effects, y.effects)
        np.testing.assert_allclose(y.cov, x.cov, rtol=0, atol=1e-15)


def test_arms_symmetric(tmp_path):
    (sb,) = load_arms_binary(write(tmp_path / "a.csv", ARMS + "S,A,10,20\nS,B,10,20\n")).studies
    assert sb.effects[0] == 0.0 and sb.cov[0, 0] == pytest.approx(0.4)


def test_arms_zero_cell(tmp_path):
    (sb,) = load_arms_binary(write(tmp_path / "a.csv", ARMS + "S,A,0,10\nS,B,5,10\n")).studies
    l1 = math.log(0.5 / 10.5)
    l2 = math.log(5.5 / 5.5)
    s1 = 1 / 0.5 + 1 / 10.5
    s2 = 1 / 5.5 + 1 / 5.5
    assert sb.effects[0] == pytest.approx(l2 - l1, abs=1e-15)
    assert sb.cov[0, 0] == pytest.approx(s1 + s2, abs=1e-15)


def test_arms_three_arm_shared_variance(tmp_path):
    (sb,) = load_arms_binary(write(tmp_path / "a.csv", ARMS + "S,A,4,20\nS,B,7,20\nS,C,9,25\n")).studies
    s_a = 1 / 4 + 1 / 16
    assert sb.baseline == "A" and sb.cov[0, 1] == pytest.approx(s_a, abs=1e-15)


def test_arms_rebaseline_matches_other_listing(tmp_path):
    rows = [("A", 4, 20), ("B", 7, 20), ("C", 9, 25)]
    blocks = []
    for first in range(3):
        order = rows[first:] + rows[:first]
        text = ARMS + "".join(f"S,{t},{e},{n}\n" for t, e, n in order)
        (sb,) = load_arms_binary(write(tmp_path / f"a{first}.csv", text)).studies
        blocks.append(full_block(sb))
        np.testing.assert_allclose(full_block(rebaseline(sb, "B")).cov, blocks[-1].cov, atol=1e-14)
    for b in blocks[1:]:
        np.testing.assert_allclose(b.effects, blocks[0].effects, atol=1e-14)
        np.testing.assert_allclose(b.cov, blocks[0].cov, atol=1e-14)


@pytest.mark.parametrize("text", ["S,A,3,0\nS,B,1,2\n", "S,A,5,4\nS,B,1,2\n", "S,A,1,4\n", "S,A,1,4\nS,A,2,4\n", "S,A,-1,4\nS,B,1,4\n"])
def test_arms_malformed(tmp_path, text):
    with pytest.raises(MalformedStudy):
        load_arms_binary(write(tmp_path / "a.csv", ARMS + text))
