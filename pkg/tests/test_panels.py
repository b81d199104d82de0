import numpy as np
import pytest

from labourfit.panels import (
    EmploymentPanel,
    PanelError,
    load_employment_panel,
    load_macro_panel,
    load_wage_panel,
    restrict_sample,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


EMPLOYMENT_4ROW = """country,industry,year,employment
AA,I1,2010,5
AA,I1,2011,6
BB,I1,2010,7
BB,I1,2011,8
"""


class TestLoadEmployment:
    def test_direct_readback(self, tmp_path):
        panel = load_employment_panel(write(tmp_path, "e.csv", EMPLOYMENT_4ROW))
        assert panel.countries == ("AA", "BB")
        assert panel.industries == ("I1",)
        assert panel.years == (2010, 2011)
        assert panel.n_missing == 0
        assert panel.series("AA", "I1").tolist() == [5.0, 6.0]

    def test_single_missing_cell(self, tmp_path):
        text = EMPLOYMENT_4ROW.replace("AA,I1,2011,6", "AA,I1,2011,")
        panel = load_employment_panel(write(tmp_path, "e.csv", text))
        assert panel.n_missing == 1
        assert np.isnan(panel.series("AA", "I1")[1])

    def test_negative_value_names_row(self, tmp_path):
        text = EMPLOYMENT_4ROW.replace("BB,I1,2010,7", "BB,I1,2010,-3")
        with pytest.raises(PanelError, match="row 4"):
            load_employment_panel(write(tmp_path, "e.csv", text))

    def test_duplicate_key_listed(self, tmp_path):
        text = EMPLOYMENT_4ROW + "AA,I1,2010,9\n"
        with pytest.raises(PanelError, match="duplicate key.*AA.*I1.*2010"):
            load_employment_panel(write(tmp_path, "e.csv", text))

    def test_malformed_year_names_row(self, tmp_path):
        text = EMPLOYMENT_4ROW.replace("BB,I1,2011,8", "BB,I1,twenty,8")
        with pytest.raises(PanelError, match="row 5"):
            load_employment_panel(write(tmp_path, "e.csv", text))

    def test_never_invents_values(self, tmp_path):
        text = EMPLOYMENT_4ROW + "AA,I2,2010,1\n"  # AA-I2-2011 and both BB-I2 cells absent
        panel = load_employment_panel(write(tmp_path, "e.csv", text))
        assert panel.n_present == 5

    def test_column_mapping(self, tmp_path):
        text = "geo,nace,time,persons\nAA,I1,2010,5\nBB,I1,2010,4\n"
        panel = load_employment_panel(
            write(tmp_path, "e.csv", text),
            columns={"country": "geo", "industry": "nace", "year": "time", "employment": "persons"},
        )
        assert panel.countries == ("AA", "BB")

    def test_roundtrip(self, tmp_path):
        text = EMPLOYMENT_4ROW.replace("AA,I1,2011,6", "AA,I1,2011,")
        path = write(tmp_path, "e.csv", text)
        panel = load_employment_panel(path)
        out = tmp_path / "out.csv"
        panel.write_csv(out)
        again = load_employment_panel(out)
        assert again.countries == panel.countries
        assert again.years == panel.years
        assert np.array_equal(again.values, panel.values, equal_nan=True)


class TestRestrict:
    def make_panel(self):
        values = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2) + 1
        return EmploymentPanel(("AA", "BB", "CC"), ("I1", "I2"), (2010, 2011), values)

    def test_subset_countries(self):
        panel = restrict_sample(self.make_panel(), countries=["AA", "CC"])
        assert panel.countries == ("AA", "CC")
        assert panel.values.shape == (2, 2, 2)

    def test_empty_year_range_errors(self):
        with pytest.raises(PanelError, match="empty year range"):
            restrict_sample(self.make_panel(), years=range(2012, 2012))

    def test_unknown_label_listed(self):
        with pytest.raises(PanelError, match="ZZ"):
            restrict_sample(self.make_panel(), countries=["AA", "ZZ"])

    def test_full_axes_identity(self):
        panel = self.make_panel()
        same = restrict_sample(panel, countries=list(panel.countries), years=list(panel.years))
        assert same.countries == panel.countries
        assert np.array_equal(same.values, panel.values)

    def test_idempotent(self):
        panel = self.make_panel()
        once = restrict_sample(panel, countries=["AA", "BB"], years=[2010, 2011])
        twice = restrict_sample(once, countries=["AA", "BB"], years=[2010, 2011])
        assert once.countries == twice.countries
        assert np.array_equal(once.values, twice.values)

    def test_validation_gate(self):
        panel = self.make_panel()
        with pytest.raises(PanelError, match="fewer than 2"):
            restrict_sample(panel, countries=["AA"]).validate_for_analysis()


MACRO_FULL = "country,year,indicator,value\n" + "".join(
    f"AA,{year},{ind},{v}\n"
    for year in (2010, 2011)
    for ind, v in [
        ("population", 1000), ("gdppc", 30000), ("compensation", 55),
        ("gva", 100), ("emprate", 65.0), ("rd_gdp", 2.1), ("exports_gdp", 80.0),
    ]
)


class TestMacro:
    def test_complete(self, tmp_path):
        macro = load_macro_panel(write(tmp_path, "m.csv", MACRO_FULL))
        assert len(macro) == 2
        assert not macro.get("AA", 2010).incomplete

    def test_missing_gva_flagged_not_dropped(self, tmp_path):
        text = MACRO_FULL.replace("AA,2011,gva,100\n", "AA,2011,gva,\n")
        macro = load_macro_panel(write(tmp_path, "m.csv", text))
        rec = macro.get("AA", 2011)
        assert rec is not None and rec.incomplete and rec.gva is None

    def test_population_zero_errors(self, tmp_path):
        text = MACRO_FULL.replace("AA,2010,population,1000", "AA,2010,population,0")
        with pytest.raises(PanelError, match="population"):
            load_macro_panel(write(tmp_path, "m.csv", text))

    def test_unknown_indicator(self, tmp_path):
        text = MACRO_FULL + "AA,2010,inflation,2\n"
        with pytest.raises(PanelError, match="inflation"):
            load_macro_panel(write(tmp_path, "m.csv", text))

    def test_share_band(self, tmp_path):
        text = MACRO_FULL.replace("AA,2010,exports_gdp,80.0", "AA,2010,exports_gdp,250")
        with pytest.raises(PanelError, match="exports_gdp"):
            load_macro_panel(write(tmp_path, "m.csv", text))

    def test_restrict(self, tmp_path):
        macro = load_macro_panel(write(tmp_path, "m.csv", MACRO_FULL))
        assert restrict_sample(macro, years=[2010]).years == (2010,)


WAGES_OK = """country,year,decile,wage
AA,2010,1,10
AA,2010,5,20
AA,2010,9,30
"""


class TestWages:
    def test_ordered_accepted(self, tmp_path):
        wages = load_wage_panel(write(tmp_path, "w.csv", WAGES_OK))
        rec = wages.get("AA", 2010)
        assert (rec.d1, rec.d5, rec.d9) == (10, 20, 30)

    def test_disordered_errors_naming_country_year(self, tmp_path):
        text = WAGES_OK.replace("AA,2010,1,10", "AA,2010,1,30").replace("AA,2010,9,30", "AA,2010,9,10")
        with pytest.raises(PanelError, match="AA-2010"):
            load_wage_panel(write(tmp_path, "w.csv", text))

    def test_missing_decile_flagged(self, tmp_path):
        text = WAGES_OK.replace("AA,2010,5,20\n", "AA,2010,5,\n")
        wages = load_wage_panel(write(tmp_path, "w.csv", text))
        assert wages.get("AA", 2010).incomplete

    def test_bad_decile(self, tmp_path):
        text = WAGES_OK + "AA,2010,2,15\n"
        with pytest.raises(PanelError, match="decile"):
            load_wage_panel(write(tmp_path, "w.csv", text))

    def test_nonpositive_wage(self, tmp_path):
        text = WAGES_OK.replace("AA,2010,1,10", "AA,2010,1,0")
        with pytest.raises(PanelError, match="wage"):
            load_wage_panel(write(tmp_path, "w.csv", text))
