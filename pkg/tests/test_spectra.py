import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from surrolab import spectra
from surrolab.spectra import DimensionRule, Spectrum, SpectrumFamily


def fam(kind, d, **kw):
    return SpectrumFamily(kind, DimensionRule(fixed=d), **kw)


def test_family_examples():
    assert list(spectra.make_spectrum(fam("isotropic", 3), 5).eigenvalues) == [1, 1, 1]
    assert list(spectra.make_spectrum(fam("power-law", 3, alpha=1), 5).eigenvalues) == [1, 1 / 2, 1 / 3]
    spiked = spectra.make_spectrum(fam("spiked", 6, spike=10, spike_count=1, tail=1), 5)
    assert list(spiked.eigenvalues) == [10, 1, 1, 1, 1, 1]


def test_power_log_law_and_dimension_rule():
    s = spectra.make_spectrum(SpectrumFamily("power-log-law", DimensionRule(scale=2, power=1.5), alpha=1, gamma=2), 4)
    assert s.d == 16
    i = np.arange(1, 17)
    np.testing.assert_allclose(s.eigenvalues, 1 / (i * np.log(i + 1) ** 2), rtol=1e-15)


@pytest.mark.parametrize("kw", [
    dict(kind="power-law", alpha=0), dict(kind="power-log-law", gamma=-1), dict(kind="spiked", spike=0),
    dict(kind="spiked", tail=-1), dict(kind="explicit", values=(1, 0)), dict(kind="wishart"),
])
def test_invalid_parameters(kw):
    with pytest.raises(ValueError):
        SpectrumFamily(dimension=DimensionRule(fixed=3), **kw)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        Spectrum(np.array([1.0, 0.0]))
    assert list(Spectrum.from_values([1, 3, 2]).eigenvalues) == [3, 2, 1]


def test_effective_rank_examples():
    r = spectra.effective_rank_r
    R = spectra.effective_rank_R
    assert r(Spectrum.from_values([1, 1, 1]), 0) == 3
    assert r(Spectrum.from_values([4, 2, 1]), 0) == 1.75
    assert r(Spectrum.from_values([10, 1, 1, 1, 1, 1]), 1) == 5
    assert R(Spectrum.from_values([1, 1, 1]), 0) == 3
    assert R(Spectrum.from_values([10, 1, 1, 1, 1, 1]), 1) == 5
    assert R(Spectrum.from_values([4, 2, 1]), 0) == 49 / 21


def test_rank_index_errors():
    s = Spectrum.from_values([4, 2, 1])
    for k in (3, -1):
        with pytest.raises(IndexError):
            spectra.effective_rank_r(s, k)
        with pytest.raises(IndexError):
            spectra.effective_rank_R(s, k)


def test_critical_index_examples():
    assert spectra.critical_index(Spectrum.from_values([1] * 10), 5) == 0
    assert spectra.critical_index(Spectrum.from_values([10, 1, 1, 1, 1, 1]), 2) == 1
    assert spectra.critical_index(Spectrum.from_values([4, 2, 1]), 100) is None


def test_exhaustive_oracle_small_spectra():
    # every tuple over {1,2,3} of length <= 8
    for d in range(1, 9):
        for vals in itertools.product((1, 2, 3), repeat=d):
            s = Spectrum.from_values(vals)
            for k in range(d):
                assert spectra.effective_rank_r(s, k) == pytest.approx(float(oracles.r_k(vals, k)), rel=1e-14)
                assert spectra.effective_rank_R(s, k) == pytest.approx(float(oracles.R_k(vals, k)), rel=1e-14)
            for n in (1, 2, 3, 5, 8, 13, 24):
                assert spectra.critical_index(s, n) == oracles.kstar(vals, n)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=30), st.floats(1e-3, 1e3))
def test_effective_ranks_scale_invariant(vals, c):
    s = Spectrum.from_values(vals)
    t = s.scaled(c)
    for k in range(s.d):
        assert spectra.effective_rank_r(t, k) == pytest.approx(spectra.effective_rank_r(s, k), rel=1e-12)
        assert spectra.effective_rank_R(t, k) == pytest.approx(spectra.effective_rank_R(s, k), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=30))
def test_kstar_monotone_in_n(vals):
    s = Spectrum.from_values(vals)
    prev = 0
    for n in range(1, 40):
        k = spectra.critical_index(s, n)
        if k is None:
            assert all(spectra.critical_index(s, m) is None for m in range(n, 40))
            break
        assert k >= prev
        prev = k


def test_benign_summary_examples():
    (row,) = spectra.benign_summary(fam("spiked", 6, spike=10, tail=1), [2])
    assert (row.sqrt_r0_over_n, row.kstar_over_n, row.n_over_R_kstar) == (math.sqrt(1.5 / 2), 1 / 2, 2 / 5)
    assert row.flag == ""
    (iso,) = spectra.benign_summary(SpectrumFamily("isotropic", DimensionRule(power=2)), [100])
    assert iso.d == 10_000 and iso.sqrt_r0_over_n == 10
    (one,) = spectra.benign_summary(fam("explicit", 1, values=(1.0,)), [1])
    assert one.kstar == 0
    (none,) = spectra.benign_summary(fam("explicit", 3, values=(4, 2, 1)), [100])
    assert none.kstar is None and none.flag == "kstar_none"
    rec = spectra.benign_rows_as_records([none])[0]
    assert len(rec) == len(spectra.BENIGN_HEADER)


def test_benign_summary_grid_validation():
    with pytest.raises(ValueError):
        spectra.benign_summary(fam("isotropic", 3), [4, 2])

