import datetime as dt

import numpy as np
import pytest

from fixtures import cleaning_fixture
from tgf.errors import DuplicateTicker, EmptyPanel, SchemaViolation
from tgf.ingest import (
    RATIO_NAMES, Panel, PriceSeries, RatioTable, SectorRow, SectorTable, clean_panel, load_panel,
    load_price_file, load_ratios, load_sectors, save_panel,
)
from tgf.synthetic import business_days


def test_load_sectors_single_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("ticker,name,sector\nAZN.L,AstraZeneca,Pharmaceuticals & biotechnology\n")
    table = load_sectors(p)
    assert len(table) == 1
    assert table.rows[0] == SectorRow("AZN.L", "AstraZeneca", "Pharmaceuticals & biotechnology")


def test_load_sectors_empty_and_duplicate(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("ticker,name,sector\n")
    assert len(load_sectors(p)) == 0
    p.write_text("ticker,name,sector\nBP.L,BP,Oil\nBP.L,BP again,Oil\n")
    with pytest.raises(DuplicateTicker):
        load_sectors(p)
    p.write_text("ticker,name,sector\nBP.L,BP,\n")
    with pytest.raises(SchemaViolation):
        load_sectors(p)


def test_load_prices_parses_and_sorts(tmp_path):
    p = tmp_path / "BP.L.csv"
    p.write_text("date,close\n2007-01-03,10.5\n2007-01-02,10.0\n")
    s = load_price_file(p)
    assert s.ticker == "BP.L"
    assert s.dates == [dt.date(2007, 1, 2), dt.date(2007, 1, 3)]
    assert list(s.closes) == [10.0, 10.5]


@pytest.mark.parametrize("body", ["2007-01-02,-1.0\n", "2007-13-02,1.0\n", "2007-01-02,abc\n"])
def test_load_prices_rejects_bad_rows(tmp_path, body):
    p = tmp_path / "X.csv"
    p.write_text("date,close\n" + body)
    with pytest.raises(SchemaViolation):
        load_price_file(p)


def test_ratio_roundtrip_and_missing_detection(tmp_path):
    table = RatioTable({"A": [1.0] * 28, "B": [1.0] * 27 + [0.0], "C": [None] + [2.0] * 27})
    table.save(tmp_path / "r.csv")
    back = load_ratios(tmp_path / "r.csv")
    assert back.values == table.values
    assert [back.is_missing(t) for t in "ABC"] == [False, True, True]
    assert back.names == RATIO_NAMES and len(RATIO_NAMES) == 28


def toy_three(days):
    sectors = SectorTable([SectorRow(t, t, "S") for t in ("A", "B", "C")])
    series = [
        PriceSeries("A", days, np.linspace(10, 11, 10)),
        PriceSeries("B", days, np.linspace(20, 19, 10)),
        PriceSeries("C", days[4:], np.linspace(5, 6, 6)),  # listed mid-period
    ]
    return sectors, series


def test_clean_panel_hand_enumerated_toy():
    days = business_days(dt.date(2007, 1, 2), 10)
    sectors, series = toy_three(days)
    panel, log = clean_panel(series, sectors, None, days[0], days[-1])
    assert panel.tickers == ["A", "B"]
    assert panel.shape == (2, 10)
    assert (log.incomplete_companies, log.missing_ratio_companies, log.dropped_dates) == (1, 0, 0)
    assert log.initial_observations == 26 and log.final_observations == 20
    assert log.reconciles()


def test_clean_panel_no_op():
    days = business_days(dt.date(2007, 1, 2), 10)
    sectors, series = toy_three(days)
    series = series[:2]
    sectors = SectorTable(sectors.rows[:2])
    ratios = RatioTable({"A": [1.0] * 28, "B": [2.0] * 28})
    panel, log = clean_panel(series, sectors, ratios, days[0], days[-1])
    assert (log.incomplete_companies, log.missing_ratio_companies, log.dropped_dates) == (0, 0, 0)
    np.testing.assert_array_equal(panel.closes[0], series[0].closes)


def test_clean_panel_three_stage_fixture():
    sectors, series, ratios, days = cleaning_fixture()
    panel, log = clean_panel(series, sectors, ratios, days[0], days[-1])
    assert (log.initial_companies, log.incomplete_companies, log.missing_ratio_companies) == (100, 17, 4)
    assert log.final_companies == 79 == len(panel.tickers)
    assert log.dropped_dates == 6
    assert log.reconciles()
    report = log.report(days[0], days[-1])
    assert "(17)" in report and "(4)" in report and "79" in report


def test_clean_panel_is_idempotent():
    sectors, series, ratios, days = cleaning_fixture(seed=3)
    panel, _ = clean_panel(series, sectors, ratios, days[0], days[-1])
    again, log = clean_panel(panel.to_series(), panel.sector_table(), ratios, days[0], days[-1])
    assert again.tickers == panel.tickers and again.dates == panel.dates
    np.testing.assert_array_equal(again.closes, panel.closes)
    assert log.incomplete_companies == log.missing_ratio_companies == log.dropped_dates == 0


def test_holiday_study_start_does_not_empty_panel():
    days = business_days(dt.date(2007, 1, 2), 10)
    sectors, series = toy_three(days)
    panel, _ = clean_panel(series[:2], SectorTable(sectors.rows[:2]), None, dt.date(2007, 1, 1), days[-1])
    assert panel.shape == (2, 10)


def test_clean_panel_errors():
    days = business_days(dt.date(2007, 1, 2), 10)
    sectors, series = toy_three(days)
    with pytest.raises(SchemaViolation):
        clean_panel(series, sectors, None, days[-1], days[0])
    with pytest.raises(EmptyPanel):
        clean_panel(series, sectors, RatioTable({}), days[0], days[-1])


def test_panel_save_load_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    days = business_days(dt.date(2020, 1, 1), 15)
    panel = Panel(["X", "Y.L"], days, np.exp(rng.normal(3, 1, (2, 15))), ["a", "b c"])
    save_panel(panel, tmp_path / "p")
    back = load_panel(tmp_path / "p")
    assert back.tickers == panel.tickers and back.dates == panel.dates and back.sectors == panel.sectors
    assert back.closes.tobytes() == panel.closes.tobytes()
