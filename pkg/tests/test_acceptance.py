"""Acceptance criteria; each test prints one PASS/FAIL line.

The synthetic end-to-end benchmark trains the desk profile and takes several
minutes; deselect it with ``-m "not slow"``.
"""

import json
import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import date
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import SMALL_RUN, cli_args
from epsnet.cli import main
from epsnet.domain import DailyRecord, FirmPanel
from epsnet.evalcore import DegenerateBaselineError, mse, skill_score
from epsnet.ingest import SyntheticConfig, generate_synthetic
from epsnet.models import ArchitectureSpec, build_model
from epsnet.nn import LstmLayerSpec, TcnSpec, Tensor, causal_conv1d, dense, grad_check, lstm_forward, mse_loss, tcn_forward
from epsnet.preprocess import ClipBounds, PreprocessConfig, clip, fill_gaps, fit_clip_bounds, fit_pipeline, percentile
from test_layers import direct_conv
from test_preprocess import order_statistic_percentile

GRAD_TOL = 1e-5


@pytest.fixture
def criterion(capsys):
    """Context manager printing ``PASS``/``FAIL`` plus any details the test records."""
    @contextmanager
    def run(name):
        details: list[str] = []
        try:
            yield details
        except BaseException as exc:
            reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            with capsys.disabled():
                print(f"\nFAIL  {name}: {reason}" + "".join(f" [{d}]" for d in details))
            raise
        with capsys.disabled():
            print(f"\nPASS  {name}" + "".join(f" [{d}]" for d in details))
    return run


# gradient correctness

def _gradient_errors():
    rng = np.random.default_rng(2024)
    errors = {}

    x, w, b = (Tensor(rng.normal(size=s)) for s in [(4, 5), (5, 3), (3,)])
    errors["dense"] = grad_check(lambda: mse_loss(dense(x, w, b, "tanh"), np.full((4, 3), 0.5)), [x, w, b])

    spec = LstmLayerSpec(3, 4, return_sequence=True)
    p = {k: Tensor(v) for k, v in spec.init_parameters(rng).items()}
    xs, target = Tensor(rng.normal(size=(2, 3, 3))), rng.normal(size=(2, 3, 4))
    errors["lstm, 3 steps"] = grad_check(lambda: mse_loss(lstm_forward(xs, spec, p), target), [xs, *p.values()])

    tcn = TcnSpec(filters=4, kernel=3, dilations=(1, 2))
    tp = {k: Tensor(v) for k, v in tcn.init_parameters(3, rng).items()}
    for t in tp.values():
        t.data[...] += rng.normal(size=t.shape) * 0.1
    xt, tt = Tensor(rng.normal(size=(2, 7, 3))), rng.normal(size=(2, 7, 4))
    errors["tcn, 2 blocks"] = grad_check(lambda: mse_loss(tcn_forward(xt, tcn, tp), tt), [xt, *tp.values()])

    for kind in ("lstm", "tcn"):
        arch = ArchitectureSpec(kind, dropout=0.0)
        model = build_model(arch, 7, np.float64)
        q = rng.normal(size=(3, *arch.quarterly_shape))
        m = rng.normal(size=(3, arch.shares_flat_dim))
        y = rng.normal(size=3)
        errors[f"default {kind} graph"] = grad_check(lambda: mse_loss(model.forward(q, m), y), model.parameters(),
                                                     max_elements=12, rng=np.random.default_rng(1))
    return errors


def test_gradient_correctness(criterion):
    with criterion("gradient correctness (max relative error < 1e-5, under 60 s)") as details:
        start = time.perf_counter()
        errors = _gradient_errors()
        elapsed = time.perf_counter() - start
        details += [f"{k}: {v:.1e}" for k, v in errors.items()] + [f"{elapsed:.1f}s"]
        bad = {k: v for k, v in errors.items() if not v < GRAD_TOL}
        assert not bad, f"gradient errors above tolerance: {bad}"
        assert elapsed < 60, f"took {elapsed:.1f}s"


# causality

def test_tcn_causality(criterion):
    with criterion("TCN causality (100 randomized trials, bit-identical past)"):
        rng = np.random.default_rng(99)
        for trial in range(100):
            n_blocks = int(rng.integers(1, 4))
            spec = TcnSpec(filters=int(rng.integers(1, 6)), kernel=int(rng.integers(1, 5)),
                           dilations=tuple(2 ** i for i in range(n_blocks)))
            c_in, steps = int(rng.integers(1, 5)), int(rng.integers(2, 25))
            params = {k: Tensor(v) for k, v in spec.init_parameters(c_in, rng).items()}
            for v in params.values():
                v.data[...] += rng.normal(size=v.shape) * 0.1
            x = rng.normal(size=(int(rng.integers(1, 4)), steps, c_in))
            t = int(rng.integers(0, steps - 1))
            perturbed = x.copy()
            perturbed[:, t + 1:] = rng.normal(size=perturbed[:, t + 1:].shape) * float(rng.choice([1e-3, 1, 1e3]))
            before = tcn_forward(Tensor(x), spec, params).data
            after = tcn_forward(Tensor(perturbed), spec, params).data
            assert_array_equal(after[:, :t + 1], before[:, :t + 1], err_msg=f"trial {trial}")


# preprocessing invariants

def _synthetic_panels():
    return generate_synthetic(SyntheticConfig(n_firms=30, n_quarters=32, seed=11, trading_days_per_quarter=30))


def _training_pools(panels, cfg, cutoff, bounds):
    """Independent rebuild of the observed, scaled and clipped training cells."""
    q_rows, d_rows = [], []
    for p in panels:
        for q in p.quarters:
            if q.report_date > cutoff:
                continue
            atq = q.features[1]
            row = []
            for k, v in enumerate(q.features):
                if v is None or (k not in cfg.unscaled_indices and atq is None):
                    row.append(np.nan)
                elif k == cfg.eps_index:
                    row.append(min(max(v, bounds.lower), bounds.upper))
                elif k in cfg.unscaled_indices:
                    row.append(v)
                else:
                    row.append(v / max(1.0, atq))
            q_rows.append(row)
        d_rows += [[np.nan if v is None else v for v in d.features] for d in p.days if d.date <= cutoff]
    return np.array(q_rows, float), np.array(d_rows, float)


def _perturb_after(panels, cutoff, rng):
    out = []
    for p in panels:
        qs = [replace(q, eps=q.eps * 7 + 3 if q.eps is not None else 1.0,
                      features=tuple(None if v is None else v * rng.normal() for v in q.features))
              if q.report_date > cutoff else q for q in p.quarters]
        ds = [DailyRecord(d.firm, d.date, tuple(float(rng.normal()) for _ in d.features)) if d.date > cutoff else d
              for d in p.days]
        out.append(FirmPanel(p.firm, qs, ds))
    return out


def test_preprocessing_invariants(criterion):
    with criterion("preprocessing invariants (studentized pool, clip idempotence, midpoint, leakage)"):
        panels = _synthetic_panels()
        cfg, cutoff = PreprocessConfig(), date(2015, 12, 31)
        ts = fit_pipeline(panels, cfg, cutoff)

        q_pool, d_pool = _training_pools(panels, cfg, cutoff, ts.clip_bounds)
        for pool, stats in ((q_pool, ts.quarterly_stats), (d_pool, ts.daily_stats)):
            for k, s in enumerate(stats):
                col = pool[:, k][~np.isnan(pool[:, k])]
                if s is None:
                    assert np.ptp(col) == 0.0
                    continue
                z = (col - s.mean) / s.std
                assert abs(z.mean()) < 1e-9, (k, z.mean())
                assert abs(z.std() - 1.0) < 1e-6, (k, z.std())

        rng = np.random.default_rng(5)
        for _ in range(1000):
            lo, hi = np.sort(rng.normal(size=2) * 10)
            b = ClipBounds(float(lo), float(hi))
            x = rng.normal(size=50) * 20
            once = clip(x, b)
            assert_array_equal(clip(once, b), once)
            v = float(x[0])
            assert clip(clip(v, b), b) == clip(v, b)

        for _ in range(1000):
            a, c = (float(v) for v in rng.normal(size=2) * 10.0 ** rng.integers(-6, 7, size=2))
            mid = fill_gaps(np.array([a, np.nan, c]), 1)[1]
            assert mid == float((Fraction(a) + Fraction(c)) / 2), (a, c, mid)

        leaked = fit_pipeline(_perturb_after(panels, cutoff, rng), cfg, cutoff)
        assert leaked == ts
        assert leaked.to_json() == ts.to_json()


# oracle equivalence

def test_oracle_equivalence(criterion):
    with criterion("oracle equivalence (1000 causal convolutions, percentile bounds)"):
        rng = np.random.default_rng(1000)
        for i in range(1000):
            batch, steps, c_in, c_out = (int(v) for v in rng.integers(1, [3, 10, 4, 4]))
            k, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            # integer-valued data keeps every partial sum exact, so the comparison can be exact
            x = rng.integers(-8, 9, size=(batch, steps, c_in)).astype(float)
            w = rng.integers(-8, 9, size=(k, c_in, c_out)).astype(float)
            assert_array_equal(causal_conv1d(Tensor(x), Tensor(w), d).data, direct_conv(x, w, d), err_msg=f"instance {i}")
        for i in range(300):
            values = (rng.normal(size=int(rng.integers(1, 60))) * 10.0 ** rng.integers(-3, 4)).tolist()
            lo, hi = sorted(rng.uniform(0, 100, size=2))
            for p in (lo, hi, 1.0, 99.0, 0.0, 100.0):
                assert percentile(values, p) == order_statistic_percentile(values, p)
            bounds = fit_clip_bounds(values, (1.0, 99.0))
            assert bounds == ClipBounds(order_statistic_percentile(values, 1.0), order_statistic_percentile(values, 99.0))


# skill score

def test_skill_score_suite(criterion):
    with criterion("skill-score suite (fixpoint, perfect model, zero baseline, affine invariance)"):
        rng = np.random.default_rng(3)
        for _ in range(200):
            y = rng.normal(size=int(rng.integers(2, 50)))
            base = y + rng.normal(size=y.size)
            model = y + rng.normal(size=y.size) * 0.5
            assert skill_score(mse(base, y), mse(base, y)) == 0.0
            assert skill_score(mse(y, y), mse(base, y)) == 1.0
            with pytest.raises(DegenerateBaselineError):
                skill_score(mse(model, y), mse(y, y))
            a, b = float(rng.choice([-1, 1]) * 10.0 ** rng.uniform(-3, 3)), float(rng.normal() * 100)
            ss = skill_score(mse(model, y), mse(base, y))
            ss_affine = skill_score(mse(a * model + b, a * y + b), mse(a * base + b, a * y + b))
            assert ss_affine == pytest.approx(ss, rel=1e-9, abs=1e-9)
        assert skill_score(0.7, 1.0) == pytest.approx(0.3, abs=1e-12)


# synthetic end-to-end

@pytest.mark.slow
def test_synthetic_end_to_end(criterion, run_root):
    with criterion("synthetic end-to-end, desk profile (mean SS vs persistent >= 0.10 for lstm and tcn, < 10 min)") as details:
        start = time.perf_counter()
        base = ["--profile", "desk"]
        for argv in (["synth"], ["preprocess"], ["train", "--kind", "lstm"], ["train", "--kind", "tcn"], ["evaluate"]):
            assert main(argv[:1] + base + argv[1:]) == 0, argv
        elapsed = time.perf_counter() - start
        doc = json.loads((run_root / "runs/default/reports/report.json").read_text())
        rows = {r["model"]: r for r in doc["reports"] if r["group"] == "all"}
        for kind in ("lstm", "tcn"):
            ss = np.array(rows[kind]["ss_vs_persistent"])
            assert ss.size == 3
            details.append(f"{kind} SS {ss.mean():.4f} ± {ss.std():.4f}")
        details.append(f"{elapsed:.0f}s wall clock")
        for kind in ("lstm", "tcn"):
            assert np.mean(rows[kind]["ss_vs_persistent"]) >= 0.10, kind
        assert "±" in (run_root / "runs/default/reports/report.txt").read_text()
        assert elapsed < 600, f"took {elapsed:.0f}s"


# architecture fidelity

def test_architecture_fidelity(criterion):
    with criterion("architecture fidelity (parameter-shape audit of built models)"):
        shared = {
            "shares0.weights": (220, 660), "shares0.bias": (660,),
            "shares1.weights": (660, 440), "shares1.bias": (440,),
            "shares2.weights": (440, 220), "shares2.bias": (220,),
            "head1.weights": (19, 8), "head1.bias": (8,),
            "head2.weights": (8, 1), "head2.bias": (1,),
        }
        lstm = {
            "lstm1.kernel": (19, 304), "lstm1.recurrent_kernel": (76, 304), "lstm1.bias": (304,),
            "lstm2.kernel": (76, 152), "lstm2.recurrent_kernel": (38, 152), "lstm2.bias": (152,),
            "head0.weights": (38 + 220, 19), "head0.bias": (19,),
        }
        tcn = {"tcn.block0.skip.kernel": (1, 19, 32), "tcn.block0.skip.bias": (32,),
               "post_tcn.weights": (32, 38), "post_tcn.bias": (38,),
               "head0.weights": (38 + 220, 19), "head0.bias": (19,)}
        for i in range(4):
            tcn[f"tcn.block{i}.conv1.kernel"] = (3, 19 if i == 0 else 32, 32)
            tcn[f"tcn.block{i}.conv1.bias"] = (32,)
            tcn[f"tcn.block{i}.conv2.kernel"] = (3, 32, 32)
            tcn[f"tcn.block{i}.conv2.bias"] = (32,)
        for kind, expected in (("lstm", {**lstm, **shared}), ("tcn", {**tcn, **shared})):
            model = build_model(ArchitectureSpec(kind), 0)
            built = {name: p.data.shape for name, p in model.params.items()}
            assert built == expected, f"{kind}: {set(built.items()) ^ set(expected.items())}"
            out = model.forward(np.zeros((2, 20, 19)), np.zeros((2, 220)))
            assert out.shape == (2, 1)
        assert ArchitectureSpec("tcn").tcn.filters == 32 and ArchitectureSpec("tcn").tcn.kernel == 3


# determinism

def test_determinism(criterion, tmp_path, monkeypatch):
    with criterion("determinism (pipeline rerun with fixed seeds gives bit-identical reports)"):
        outputs = []
        for name in ("first", "second"):
            monkeypatch.setenv("EPSNET_RUN_ROOT", str(tmp_path / name))
            for cmd in ("synth", "preprocess"):
                assert main(cli_args(cmd)) == 0
            for kind in ("lstm", "tcn"):
                assert main(cli_args("train", "--kind", kind)) == 0
            assert main(cli_args("evaluate")) == 0
            reports = tmp_path / name / "runs/default/reports"
            outputs.append(((reports / "report.json").read_bytes(), (reports / "report.txt").read_bytes()))
        assert outputs[0] == outputs[1]
