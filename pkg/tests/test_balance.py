import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dapsm.balance import asdm, balance_report, treated_sd
from dapsm.daps import MatchedSet
from dapsm.data import Dataset
from dapsm.errors import DegenerateCovariateError, InputError


def matched(pairs):
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return MatchedSet(pairs=pairs, dropped_treated=np.empty(0, int), total_cost=0.0,
                      mean_pair_distance=0.0)


class TestAsdm:
    def test_identical_means(self):
        assert asdm([1, 2, 2, 1], [0, 1], [2, 3], 1.0) == 0.0

    def test_unit(self):
        assert asdm([1.0, 0.0], [0], [1], 1.0) == 1.0

    def test_hand_example(self):
        v = np.array([1, 2, 3, 0, 1, 2], dtype=float)
        sd = v[:3].std(ddof=1)
        assert sd == 1.0
        assert asdm(v, [0, 1, 2], [3, 4, 5], sd) == pytest.approx(1.0)

    def test_errors(self):
        with pytest.raises(DegenerateCovariateError):
            asdm([1, 2], [0], [1], 0.0)
        with pytest.raises(InputError):
            asdm([1, 2], [], [1], 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(1e-2, 1e2))
    def test_shift_and_scale_invariance(self, shift, scale):
        v = np.random.default_rng(0).standard_normal(20)
        z = np.array([1] * 8 + [0] * 12)
        t, c = np.arange(8), np.arange(8, 20)
        base = asdm(v, t, c, treated_sd(v, z)[0])
        moved = v * scale + shift
        assert asdm(moved, t, c, treated_sd(moved, z)[0]) == pytest.approx(base, rel=1e-7, abs=1e-9)


class TestReport:
    def dataset(self, rng, n=40):
        X = rng.standard_normal((n, 3))
        z = np.array([1, 0] * (n // 2))
        X[z == 1] += 0.5
        return Dataset(coords=rng.uniform(size=(n, 2)), X=X, z=z, covariate_names=["a", "b", "c"])

    def test_full_data_before_equals_after(self, rng):
        ds = self.dataset(rng)
        pairs = np.column_stack([ds.treated_idx, ds.control_idx])
        rep = balance_report(ds, matched(pairs))
        for cb in rep.per_covariate:
            assert cb.asdm_after == pytest.approx(cb.asdm_before, abs=1e-14)

    def test_mirrored_pairs_balance_exactly(self, rng):
        n = 20
        X = rng.standard_normal((n, 2))
        X[1::2] = X[0::2]
        z = np.array([1, 0] * (n // 2))
        ds = Dataset(coords=rng.uniform(size=(n, 2)), X=X, z=z, covariate_names=["a", "b"])
        rep = balance_report(ds, matched(np.column_stack([np.arange(0, n, 2), np.arange(1, n, 2)])))
        assert rep.max_asdm_after == 0.0 and rep.n_imbalanced_after == 0 and rep.all_balanced

    def test_counts_match_cutoff(self, rng):
        ds = self.dataset(rng)
        rep = balance_report(ds, matched([[0, 1], [2, 5], [4, 3]]), cutoff=0.2)
        after = [cb.asdm_after for cb in rep.per_covariate]
        before = [cb.asdm_before for cb in rep.per_covariate]
        assert rep.n_imbalanced_after == sum(a > 0.2 for a in after)
        assert rep.n_imbalanced_before == sum(b > 0.2 for b in before)
        assert rep.max_asdm_after == max(after)
        assert rep.mean_asdm_after == pytest.approx(np.mean(after))

    def test_denominator_is_full_treated_sd(self, rng):
        ds = self.dataset(rng)
        rep = balance_report(ds, matched([[0, 1], [2, 3]]))
        a = ds.X[:, 0]
        expected = abs(a[[0, 2]].mean() - a[[1, 3]].mean()) / a[ds.z == 1].std(ddof=1)
        assert rep.asdm_after("a") == pytest.approx(expected, abs=1e-14)

    def test_empty_match_is_flagged(self, rng):
        ds = self.dataset(rng)
        rep = balance_report(ds, matched(np.empty((0, 2))))
        assert rep.matched_empty and not rep.all_balanced
        assert np.isnan(rep.asdm_after("a"))
        assert "NA" in rep.to_csv()

    def test_extra_covariate(self, rng):
        ds = self.dataset(rng)
        ds.extra["U"] = rng.standard_normal(ds.n)
        rep = balance_report(ds, matched([[0, 1]]), covariates=["a", "U"])
        assert [cb.name for cb in rep.per_covariate] == ["a", "U"]

    def test_errors(self, rng):
        ds = self.dataset(rng)
        with pytest.raises(InputError):
            balance_report(ds, matched([[0, 999]]))
        const = Dataset(coords=ds.coords, X=np.ones((ds.n, 1)), z=ds.z, covariate_names=["k"])
        with pytest.raises(DegenerateCovariateError):
            balance_report(const, matched([[0, 1]]))

    def test_csv_lists_every_covariate(self, rng):
        ds = self.dataset(rng)
        text = balance_report(ds, matched([[0, 1]])).to_csv()
        lines = text.strip().splitlines()
        assert lines[0].startswith("covariate,")
        assert [ln.split(",")[0] for ln in lines[1:]] == ["a", "b", "c"]
