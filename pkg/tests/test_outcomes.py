import numpy as np
import pytest
from hypothesis import given, strategies as st

from labourfit.decomposition import DecompositionRecord
from labourfit.outcomes import (
    OutcomeError,
    assemble_panel,
    employment_growth,
    labour_share,
    wage_ratios,
)
from labourfit.panels import MacroPanel, MacroRecord, WagePanel, WageRecord


def macro_panel(entries):
    return MacroPanel({(rec.country, rec.year): rec for rec in entries})


def wage_panel(entries):
    return WagePanel({(rec.country, rec.year): rec for rec in entries})


def full_macro(country, year, emprate=65.0, **overrides):
    values = dict(population=1e6, gdppc=3e4, compensation=55.0, gva=100.0,
                  emprate=emprate, rd_gdp=2.0, exports_gdp=80.0)
    values.update(overrides)
    return MacroRecord(country=country, year=year, **values)


class TestEmploymentGrowth:
    def test_ratio(self):
        macro = macro_panel([full_macro("AA", 2010, emprate=0.50), full_macro("AA", 2011, emprate=0.55)])
        growth = employment_growth(macro)
        assert growth[("AA", 2011)] == pytest.approx(1.1, rel=1e-12)

    def test_constant_rate_is_one(self):
        macro = macro_panel([full_macro("AA", 2010), full_macro("AA", 2011)])
        assert employment_growth(macro)[("AA", 2011)] == 1.0

    def test_first_year_missing(self):
        macro = macro_panel([full_macro("AA", 2010), full_macro("AA", 2011)])
        assert ("AA", 2010) not in employment_growth(macro)

    def test_zero_denominator_warns_and_skips(self, caplog):
        import logging

        macro = macro_panel([full_macro("AA", 2010, emprate=0.0), full_macro("AA", 2011)])
        with caplog.at_level(logging.WARNING):
            growth = employment_growth(macro)
        assert ("AA", 2011) not in growth
        assert "zero employment rate" in caplog.text


class TestWageRatios:
    def test_fixture(self):
        ratios = wage_ratios(wage_panel([WageRecord("AA", 2010, 10, 20, 30)]))
        r91, r51, r95 = ratios[("AA", 2010)]
        assert (r91, r51, r95) == (3.0, 2.0, 1.5)

    def test_equal_deciles(self):
        ratios = wage_ratios(wage_panel([WageRecord("AA", 2010, 5, 5, 5)]))
        assert ratios[("AA", 2010)] == (1.0, 1.0, 1.0)

    def test_missing_decile_drops_all_three(self):
        ratios = wage_ratios(wage_panel([WageRecord("AA", 2010, 10, None, 30)]))
        assert ratios == {}

    @given(
        d1=st.floats(0.1, 1e4),
        step5=st.floats(0, 1e4),
        step9=st.floats(0, 1e4),
    )
    def test_identity_exact(self, d1, step5, step9):
        d5, d9 = d1 + step5, d1 + step5 + step9
        ratios = wage_ratios(wage_panel([WageRecord("AA", 2010, d1, d5, d9)]))
        r91, r51, r95 = ratios[("AA", 2010)]
        assert r91 == r51 * r95  # bitwise, by construction
        assert r91 == pytest.approx(d9 / d1, rel=1e-12)


class TestLabourShare:
    def test_ratio(self):
        macro = macro_panel([full_macro("AA", 2010, compensation=60.0, gva=100.0)])
        assert labour_share(macro)[("AA", 2010)] == 0.6

    def test_equal_is_one(self):
        macro = macro_panel([full_macro("AA", 2010, compensation=100.0, gva=100.0)])
        assert labour_share(macro)[("AA", 2010)] == 1.0

    def test_zero_gva_missing_with_warning(self, caplog):
        import logging

        macro = macro_panel([full_macro("AA", 2010, gva=0.0)])
        with caplog.at_level(logging.WARNING):
            share = labour_share(macro)
        assert share == {}
        assert "GVA" in caplog.text

    def test_outside_band_kept_with_warning(self, caplog):
        import logging

        macro = macro_panel([full_macro("AA", 2010, compensation=250.0, gva=100.0)])
        with caplog.at_level(logging.WARNING):
            share = labour_share(macro)
        assert share[("AA", 2010)] == 2.5
        assert "sanity band" in caplog.text


def q_record(country, t0, between=0.01, within=0.005):
    return DecompositionRecord(country, t0, t0 + 1, 1, between + within, within, between, "Q")


def s_record(country, t0):
    return DecompositionRecord(country, t0, t0 + 1, 1, 0.3, 0.1, 0.2, "S")


class TestAssemblePanel:
    def sources(self, countries=("AA", "BB"), years=(2010, 2011, 2012)):
        macro = macro_panel([full_macro(c, y, emprate=60 + y - 2010) for c in countries for y in years])
        wages = wage_panel([WageRecord(c, y, 10.0, 20.0, 30.0 + y - 2010) for c in countries for y in years])
        records = [q_record(c, y) for c in countries for y in years[:-1]]
        entropy = [s_record(c, y) for c in countries for y in years[:-1]]
        return records, macro, wages, entropy

    def test_lag_accounting(self):
        records, macro, wages, entropy = self.sources()
        frame = assemble_panel(records, macro, wages, entropy_decomposition=entropy)
        assert len(frame) == 4  # 2 countries x 2 windows; first year lost to differencing
        assert set(frame["year"]) == {2011, 2012}
        assert frame["g"].notna().all()
        assert frame["between_s"].notna().all()

    def test_growth_units_both_emitted(self):
        records, macro, wages, entropy = self.sources()
        frame = assemble_panel(records, macro, wages)
        assert np.allclose(frame["g_pct"], (frame["g"] - 1) * 100)

    def test_missing_wage_keeps_row(self):
        records, macro, wages, _ = self.sources()
        wages = wage_panel([WageRecord("AA", 2011, 10.0, None, 30.0)] +
                           [WageRecord("BB", y, 10.0, 20.0, 30.0) for y in (2011, 2012)])
        frame = assemble_panel(records, macro, wages)
        assert len(frame) == 4
        aa_2011 = frame[(frame.country == "AA") & (frame.year == 2011)].iloc[0]
        assert np.isnan(aa_2011["r91"]) and not np.isnan(aa_2011["g"])

    def test_disjoint_keys_error(self):
        records, macro, wages, _ = self.sources()
        other_macro = macro_panel([full_macro("ZZ", 1990)])
        other_wages = wage_panel([WageRecord("ZZ", 1990, 1.0, 2.0, 3.0)])
        with pytest.raises(OutcomeError, match="disjoint"):
            assemble_panel(records, other_macro, other_wages)

    def test_no_k1_records_error(self):
        _, macro, wages, _ = self.sources()
        record = DecompositionRecord("AA", 2010, 2014, 4, 0.1, 0.05, 0.05, "Q")
        with pytest.raises(OutcomeError, match="k=1"):
            assemble_panel([record], macro, wages)

    def test_order_independence(self):
        records, macro, wages, entropy = self.sources()
        a = assemble_panel(records, macro, wages, entropy_decomposition=entropy)
        b = assemble_panel(records[::-1], macro, wages, entropy_decomposition=entropy[::-1])
        assert a.equals(b)

    def test_lag_shifts_regressors(self):
        records, macro, wages, _ = self.sources()
        frame = assemble_panel(records, macro, wages, lag=1)
        assert set(frame["year"]) == {2012, 2013}
        in_sample = frame[frame.year == 2012].iloc[0]
        assert not np.isnan(in_sample["g"])

    def test_controls_are_logged(self):
        records, macro, wages, _ = self.sources()
        frame = assemble_panel(records, macro, wages)
        assert np.allclose(frame["log_pop"], np.log(1e6))
        assert np.allclose(frame["log_gdppc"], np.log(3e4))
