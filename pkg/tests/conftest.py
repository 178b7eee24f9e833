from datetime import date, timedelta

import numpy as np
import pytest

from epsnet.domain import DailyRecord, FirmPanel, Group, QuarterlyRecord, Sample
from epsnet.domain import add_months
from epsnet.ingest import SyntheticConfig, generate_synthetic
from epsnet.preprocess import PreprocessConfig

SMALL = PreprocessConfig(window_size=4, horizon=1, max_gap=1, daily_steps=3)


def make_panel(firm="F1", n_quarters=8, eps=None, group=Group.NONFINANCIAL, start=date(2010, 3, 31),
               seed=0, analyst=True, days_per_quarter=5, gaps=()):
    """Panel with features (eps, atq, x) and two daily features.

    ``gaps`` lists quarter indices whose EPS cell is blank.
    """
    rng = np.random.default_rng(seed)
    if eps is None:
        eps = rng.normal(size=n_quarters)
    quarters, days = [], []
    for i in range(n_quarters):
        d = add_months(start, 3 * i)
        e = None if i in gaps else float(eps[i])
        atq = float(50 + 10 * rng.random())
        x = float(atq * rng.normal())
        nxt = float(eps[i + 1]) if analyst and i + 1 < n_quarters else None
        quarters.append(QuarterlyRecord(firm, d, e, atq, (e, atq, x), group, nxt))
        for k in range(days_per_quarter):
            day = d - timedelta(days=days_per_quarter - 1 - k)
            days.append(DailyRecord(firm, day, tuple(float(v) for v in rng.normal(size=2))))
    return FirmPanel(firm, quarters, days)


def make_sample(label_date, firm="F1", group=Group.NONFINANCIAL, label=0.0, persistent=0.0, analyst=None):
    return Sample(firm, label_date - timedelta(days=90), np.zeros((2, 2)), np.zeros(3), label, label_date,
                  persistent, analyst, group)


@pytest.fixture(scope="session")
def tiny_synthetic():
    return generate_synthetic(SyntheticConfig(n_firms=6, n_quarters=24, seed=7, trading_days_per_quarter=25))


# a run small enough for end-to-end CLI tests
SMALL_RUN = [
    "synthetic.n_firms=12",
    "train.epochs=3",
    "train.repetitions=2",
    "train.batch_size=64",
    'architecture={"shares_tower_dims": [8, 4], "head_dims": [4, 1], "lstm_dims": [4, 2], '
    '"tcn": {"filters": 3, "kernel": 3, "dilations": [1, 2, 4, 8]}, "post_tcn_dense": 2}',
]


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    monkeypatch.setenv("EPSNET_RUN_ROOT", str(tmp_path))
    return tmp_path


def cli_args(command, *extra, overrides=SMALL_RUN):
    args = [command, "--seed", "3"]
    for o in overrides:
        args += ["--set", o]
    return args + list(extra)
