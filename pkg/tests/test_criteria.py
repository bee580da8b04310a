import math

import pytest
from hypothesis import given, strategies as st

from adok import criteria as ic


def test_aic_zero_baseline():
    assert ic.criterion("aic", nll=0.0, d=0, n=10) == 0.0


def test_bic_penalty_value():
    assert ic.penalty("bic", d=4, n=150) == pytest.approx(4 * math.log(150), rel=1e-12)
    assert ic.penalty("bic", d=4, n=150) == pytest.approx(20.0425, abs=5e-4)


def test_hqc_penalty_value():
    assert ic.penalty("hqc", d=4, n=150) == pytest.approx(
        8 * math.log(math.log(150)), rel=1e-12
    )
    assert ic.penalty("hqc", d=4, n=150) == pytest.approx(12.8924, abs=5e-4)


def test_penalty_delta_constants_at_reference_sample_size():
    assert ic.penalty_delta("aic", 4, 5, 150) == -2.0
    assert ic.penalty_delta("aicc", 4, 5, 150) == pytest.approx(-2.14, abs=0.005)
    assert ic.penalty_delta("hqc", 4, 5, 150) == pytest.approx(-3.22, abs=0.005)
    assert ic.penalty_delta("bic", 4, 5, 150) == pytest.approx(-5.01, abs=0.005)


def test_penalty_magnitude_hierarchy_at_reference_sample_size():
    deltas = {kind: abs(ic.penalty_delta(kind, 4, 5, 150)) for kind in ic.CRITERIA}
    assert deltas["aic"] < deltas["aicc"] < deltas["hqc"] < deltas["bic"]


def test_aicc_penalty_approaches_aic():
    gaps = []
    for n in (10**2, 10**4, 10**6):
        gap = ic.penalty("aicc", d=4, n=n) - ic.penalty("aic", d=4, n=n)
        assert gap > 0
        gaps.append(gap)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 1e-4


def test_aicc_requires_enough_samples():
    with pytest.raises(ValueError):
        ic.criterion("aicc", nll=1.0, d=7, n=8)
    # one extra sample makes it defined again
    ic.criterion("aicc", nll=1.0, d=7, n=9)
    with pytest.raises(ValueError):
        ic.penalty("aicc", d=7, n=9, aicc_form="plus_one")


def test_plus_one_correction_matches_shifted_dimension():
    # Counting the variance as a parameter: d -> d+1 in the standard form.
    for d in range(0, 6):
        got = ic.penalty("aicc", d=d, n=40, aicc_form="plus_one")
        shifted = 2.0 * 40 / (40 - (d + 1) - 1) * (d + 1) - 2.0
        assert got == pytest.approx(shifted, rel=1e-12)


@given(
    st.floats(-50, 50),
    st.floats(0.01, 10),
    st.integers(0, 10),
    st.integers(20, 100000),
)
def test_criterion_monotone_in_nll_and_d(nll, bump, d, n):
    for kind in ic.CRITERIA:
        base = ic.criterion(kind, nll, d, n)
        assert ic.criterion(kind, nll + bump, d, n) > base
        assert ic.criterion(kind, nll, d + 1, n) > base


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ic.criterion("dic", 0.0, 1, 10)


class FakeModel:
    def __init__(self, nll, d, n, complexity=None):
        self.nll = nll
        self.d = d
        self.n = n
        self.complexity = complexity if complexity is not None else 2 * d + 1
        self.criteria = ic.all_criteria(nll, d, n)


def test_rank_prefers_lower_criterion_and_breaks_ties_by_dimension():
    small = FakeModel(nll=10.0, d=1, n=100)
    big = FakeModel(nll=10.0, d=2, n=100)
    assert ic.rank([big, small], "aic") == [small, big]
    only = FakeModel(nll=3.0, d=1, n=100)
    assert ic.rank([only], "aic") == [only]


def test_rank_argmin_invariant_to_nll_shift():
    models = [FakeModel(5.0, 1, 100), FakeModel(4.6, 2, 100), FakeModel(4.5, 3, 100)]
    order_a = ic.rank(models, "aic")
    shifted = [FakeModel(m.nll + 7.3, m.d, m.n) for m in models]
    order_b = ic.rank(shifted, "aic")
    assert [m.d for m in order_a] == [m.d for m in order_b]


def test_rank_rejects_mixed_sample_counts_and_empty():
    with pytest.raises(ValueError):
        ic.rank([])
    with pytest.raises(ValueError):
        ic.rank([FakeModel(1.0, 1, 100), FakeModel(1.0, 1, 200)])


def test_criteria_csv(tmp_path):
    models = [FakeModel(5.0, 1, 100), FakeModel(4.0, 2, 100)]
    path = tmp_path / "table.csv"
    ic.write_criteria_csv(path, models, ["k1*x", "k1*x+k2"])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "model,expression,d,nll,aic,aicc,hqc,bic"
    assert len(lines) == 3
    assert lines[1].startswith("0,k1*x,1,5,")
