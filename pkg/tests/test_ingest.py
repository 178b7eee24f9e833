from datetime import date

import numpy as np
import pytest

from conftest import make_panel
from epsnet.domain import Group
from epsnet.ingest import (DAILY_FEATURES, QUARTERLY_FEATURES, DuplicateRecordError, MalformedRowError, SchemaConfig,
                           SchemaError, SyntheticConfig, generate_synthetic, load_panels, write_panels)

TINY_SCHEMA = SchemaConfig(quarterly_features=("epsfiq", "atq", "x"), daily_features=("ret", "prc"))


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def test_round_trip_exact(tmp_path, tiny_synthetic):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_panels(tiny_synthetic, q, d)
    assert load_panels(q, d) == tiny_synthetic


def test_round_trip_hand_panels(tmp_path):
    panels = [make_panel("A", 24, seed=1), make_panel("B", 24, seed=2, group=Group.FINANCIAL, gaps=(3,))]
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_panels(panels, q, d, TINY_SCHEMA)
    back = load_panels(q, d, TINY_SCHEMA)
    assert back == panels
    assert [len(p.quarters) for p in back] == [24, 24]
    assert back[1].quarters[3].eps is None and back[1].group is Group.FINANCIAL


def test_rows_sorted_per_firm(tmp_path):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    header = ["cusip", "rdq", "epsfiq", "atq", "x"]
    write_csv(q, header, [["B", "2010-06-30", 1, 2, 3], ["A", "2010-06-30", 1, 2, 3], ["B", "2010-03-31", 4, 5, 6]])
    write_csv(d, ["cusip", "date", "ret", "prc"], [["A", "2010-06-01", 0.1, 2]])
    panels = load_panels(q, d, TINY_SCHEMA)
    assert [p.firm for p in panels] == ["A", "B"]
    assert [r.report_date for r in panels[1].quarters] == [date(2010, 3, 31), date(2010, 6, 30)]
    assert panels[1].quarters[0].eps == 4.0
    # no group column -> nonfinancial
    assert panels[0].group is Group.NONFINANCIAL


def test_empty_eps_is_a_gap(tmp_path):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_csv(q, ["cusip", "rdq", "epsfiq", "atq", "x"], [["A", "2010-03-31", "", 2, 3]])
    write_csv(d, ["cusip", "date", "ret", "prc"], [])
    rec = load_panels(q, d, TINY_SCHEMA)[0].quarters[0]
    assert rec.eps is None and rec.features[0] is None and rec.total_assets == 2.0


def test_duplicate_record(tmp_path):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_csv(q, ["cusip", "rdq", "epsfiq", "atq", "x"], [["A", "2010-03-31", 1, 2, 3], ["A", "2010-03-31", 1, 2, 3]])
    write_csv(d, ["cusip", "date", "ret", "prc"], [])
    with pytest.raises(DuplicateRecordError, match="q.csv:3"):
        load_panels(q, d, TINY_SCHEMA)


def test_missing_mandatory_column(tmp_path):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_csv(q, ["cusip", "rdq", "atq", "x"], [])
    write_csv(d, ["cusip", "date", "ret", "prc"], [])
    with pytest.raises(SchemaError, match="epsfiq"):
        load_panels(q, d, TINY_SCHEMA)


@pytest.mark.parametrize("cell, message", [("abc", "cannot parse"), ("nan", "non-finite"), ("inf", "non-finite")])
def test_malformed_cells_report_line(tmp_path, cell, message):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_csv(q, ["cusip", "rdq", "epsfiq", "atq", "x"], [["A", "2010-03-31", 1, 2, 3], ["A", "2010-06-30", 1, 2, cell]])
    write_csv(d, ["cusip", "date", "ret", "prc"], [])
    with pytest.raises(MalformedRowError, match=f"q.csv:3: {message}"):
        load_panels(q, d, TINY_SCHEMA)


def test_bad_date_and_field_count(tmp_path):
    q, d = tmp_path / "q.csv", tmp_path / "d.csv"
    write_csv(q, ["cusip", "rdq", "epsfiq", "atq", "x"], [["A", "31/03/2010", 1, 2, 3]])
    write_csv(d, ["cusip", "date", "ret", "prc"], [])
    with pytest.raises(MalformedRowError, match="date"):
        load_panels(q, d, TINY_SCHEMA)
    write_csv(q, ["cusip", "rdq", "epsfiq", "atq", "x"], [["A", "2010-03-31", 1, 2]])
    with pytest.raises(MalformedRowError, match="expected 5 fields"):
        load_panels(q, d, TINY_SCHEMA)


def test_schema_validation():
    with pytest.raises(SchemaError):
        SchemaConfig(firm_column="")
    with pytest.raises(SchemaError):
        SchemaConfig(quarterly_features=("a", "a"))
    assert len(SchemaConfig().quarterly_features) == 19 == len(QUARTERLY_FEATURES)
    assert len(DAILY_FEATURES) == 11


def test_synthetic_deterministic():
    cfg = SyntheticConfig(n_firms=4, n_quarters=22, seed=42, trading_days_per_quarter=5)
    assert generate_synthetic(cfg) == generate_synthetic(cfg)
    other = generate_synthetic(SyntheticConfig(n_firms=4, n_quarters=22, seed=43, trading_days_per_quarter=5))
    assert other != generate_synthetic(cfg)


def test_synthetic_degenerate_dynamics_give_zero_eps():
    cfg = SyntheticConfig(n_firms=3, n_quarters=24, ar_coefficient=0.0, seasonal_amplitude=0.0, noise_std=0.0,
                          missing_rate=0.0, trading_days_per_quarter=3)
    for p in generate_synthetic(cfg):
        assert all(q.eps == 0.0 for q in p.quarters)


def test_synthetic_missing_share():
    cfg = SyntheticConfig(n_firms=10, n_quarters=40, missing_rate=0.05, trading_days_per_quarter=2)
    cells = [v for p in generate_synthetic(cfg) for q in p.quarters for v in q.features]
    share = sum(v is None for v in cells) / len(cells)
    assert 0.03 <= share <= 0.07


def test_synthetic_shapes_and_invariants(tiny_synthetic):
    p = tiny_synthetic[0]
    assert len(p.quarters) == 24 and len(p.days) == 24 * 25
    assert all(len(q.features) == 19 for q in p.quarters)
    assert all(len(d.features) == 11 for d in p.days)
    assert p.quarters[-1].report_date == date(2017, 12, 31)
    # eps field mirrors the first feature column
    assert all(q.eps == q.features[0] for q in p.quarters)


def test_synthetic_ar_structure():
    cfg = SyntheticConfig(n_firms=60, n_quarters=40, seasonal_amplitude=0.0, missing_rate=0.0,
                          trading_days_per_quarter=1, seed=3)
    x, y = [], []
    for p in generate_synthetic(cfg):
        e = np.array([q.eps for q in p.quarters])
        x.append(e[:-1])
        y.append(e[1:])
    x, y = np.concatenate(x), np.concatenate(y)
    phi = float(x @ y / (x @ x))
    assert abs(phi - 0.6) < 0.05


def test_synthetic_perfect_analysts():
    cfg = SyntheticConfig(n_firms=3, n_quarters=24, analyst_noise_std=0.0, missing_rate=0.0,
                          trading_days_per_quarter=1)
    for p in generate_synthetic(cfg):
        for cur, nxt in zip(p.quarters, p.quarters[1:]):
            assert cur.analyst_mean_eps == nxt.eps


@pytest.mark.parametrize("field, value", [("n_firms", 0), ("ar_coefficient", 1.0), ("missing_rate", 1.0),
                                          ("noise_std", -1.0), ("n_quarters", 10)])
def test_synthetic_config_rejects(field, value):
    with pytest.raises(ValueError):
        SyntheticConfig(**{field: value})
