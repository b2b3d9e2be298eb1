import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from phibe.basis import gauss_legendre
from phibe.metrics import ERROR_COLUMNS, ErrorReport, error_report, fit_order, l2_error, seed_summary, write_error_csv

QERR = gauss_legendre(-math.pi, math.pi, 800)


def test_l2_examples():
    f = lambda s: np.sin(s[:, 0])
    assert l2_error(f, f, QERR) == 0.0
    assert l2_error(lambda s: np.sin(s[:, 0]) + 0.3, f, QERR) == pytest.approx(0.3 * math.sqrt(2 * math.pi))
    assert l2_error(lambda s: np.cos(s[:, 0]), lambda s: np.zeros(len(s)), QERR) == pytest.approx(math.sqrt(math.pi))
    with pytest.raises(FloatingPointError):
        l2_error(lambda s: np.full(len(s), np.nan), f, QERR)


coeffs = arrays(float, 4, elements=st.floats(-5, 5))


def _trig(c):
    return lambda s: c[0] + c[1] * np.cos(s[:, 0]) + c[2] * np.sin(2 * s[:, 0]) + c[3] * s[:, 0] ** 2


@settings(max_examples=100, deadline=None)
@given(a=coeffs, b=coeffs, c=coeffs)
def test_l2_is_a_metric(a, b, c):
    f, g, h = _trig(a), _trig(b), _trig(c)
    fg, gf = l2_error(f, g, QERR), l2_error(g, f, QERR)
    assert fg >= 0
    assert abs(fg - gf) <= 1e-12 * max(fg, 1.0)
    assert fg <= l2_error(f, h, QERR) + l2_error(h, g, QERR) + 1e-12 * max(fg, 1.0)


@settings(max_examples=50, deadline=None)
@given(a=coeffs, b=coeffs)
def test_report_norm_relation(a, b):
    rep = error_report(_trig(a), _trig(b), QERR, method="x")
    assert rep.linf >= rep.l2 / math.sqrt(QERR.measure) - 1e-12
    assert rep.l2 == pytest.approx(l2_error(_trig(a), _trig(b), QERR), abs=1e-12)


def test_fit_order_examples():
    x = [5, 2.5, 1.25, 0.625]
    f = fit_order(x, [3 * v for v in x])
    assert f.slope == pytest.approx(1.0, abs=1e-12) and f.r2 == pytest.approx(1.0)
    assert fit_order(x, [3 * v**2 for v in x]).slope == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_order([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_order([1, 2, 3], [1, 0, 2])


@settings(max_examples=100, deadline=None)
@given(e=arrays(float, 5, elements=st.floats(1e-6, 1e3)), c=st.sampled_from([0.25, 0.5, 2.0, 8.0, 1024.0]))
def test_fit_order_scale_invariant(e, c):
    x = [1, 2, 4, 8, 16]
    # power-of-two scales shift every log by the same exactly representable amount
    assert fit_order(x, e * c).slope == pytest.approx(fit_order(x, e).slope, abs=1e-9)


def test_fit_order_scale_invariant_generic():
    rng = np.random.default_rng(0)
    e = rng.uniform(0.1, 1, 6)
    x = np.arange(1, 7.0)
    for c in (3.7, 1e-5, 123.0):
        assert fit_order(x, e * c).slope == pytest.approx(fit_order(x, e).slope, abs=1e-12)


def test_seed_summary():
    s = seed_summary([1.5, 1.5, 1.5])
    assert s.variance == 0 and s.mean == 1.5
    s = seed_summary([0, 2])
    assert (s.mean, s.variance, s.median) == (1.0, 2.0, 1.0)
    x = np.random.default_rng(2024).standard_normal(100)
    assert abs(seed_summary(x).mean) < 3 / math.sqrt(100)
    assert seed_summary(x).stderr == pytest.approx(x.std(ddof=1) / 10)
    with pytest.raises(ValueError):
        seed_summary([1.0])


def test_error_csv_schema(tmp_path):
    reps = [ErrorReport(0.1, 0.2, "g", dict(method="be", order=1, dt=0.5, n=10, seed=3)),
            ErrorReport(0.3, 0.4, "g", dict(method="lstd"))]
    write_error_csv(tmp_path / "e.csv", reps)
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert tuple(rows[0].keys()) == ERROR_COLUMNS == ("method", "order", "dt", "n", "seed", "l2", "linf")
    assert rows[0]["method"] == "be" and float(rows[0]["l2"]) == 0.1
    assert rows[1]["dt"] == ""
