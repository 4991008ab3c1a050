import math

import numpy as np
import pytest

from kirchhoff_fem.harness import (
    CONVERGENCE_HEADER,
    DECAY_HEADER,
    ConvergenceRow,
    DegenerateFitError,
    convergence_study,
    decay_study,
    fit_decay,
    format_table,
    parse_levels,
    rates,
    read_convergence_csv,
    read_series_csv,
    time_step_for,
    write_convergence_csv,
    write_plot_script,
    write_series_csv,
)
from kirchhoff_fem.problems import ProblemSpec, example1, example3
from kirchhoff_fem.schemes import TimeSeriesRecord


def test_parse_levels():
    assert parse_levels("0..4") == [0, 1, 2, 3, 4]
    assert parse_levels("3") == [3]
    with pytest.raises(ValueError):
        parse_levels("4..2")


def test_time_step_rules():
    assert time_step_for(2, "h2") == 1 / 64
    assert time_step_for(2, "h2", c=0.5) == 1 / 128
    assert time_step_for(2, "fixed", dt=0.01) == 0.01
    with pytest.raises(ValueError):
        time_step_for(2, "fixed")
    with pytest.raises(ValueError):
        time_step_for(2, "cfl")


def test_rates():
    assert rates([1.0, 0.25, 0.0625]) == [None, 2.0, 2.0]


@pytest.fixture(scope="module")
def small_study():
    return convergence_study(example1(), range(3), scheme="mbe")


def test_convergence_rows(small_study):
    assert [r.level for r in small_study] == [0, 1, 2]
    assert [r.h for r in small_study] == [0.5, 0.25, 0.125]
    assert [r.dt for r in small_study] == [0.25, 0.0625, 0.015625]
    assert small_study[0].l2_rate is None and small_study[0].h1_rate is None
    for r in small_study:
        assert r.l2_error > 0 and r.h1_error > 0
        assert r.h1_full_error == pytest.approx(math.hypot(r.l2_error, r.h1_error))


def test_example1_level2_l2_error_near_table(small_study):
    # reported value at h = 1/8 is 0.000287
    assert 0.000287 / 2 <= small_study[2].l2_error <= 0.000287 * 2


def test_convergence_csv_round_trip(small_study, tmp_path):
    path = write_convergence_csv(small_study, tmp_path / "conv.csv")
    assert path.read_text().splitlines()[0] == ",".join(CONVERGENCE_HEADER)
    back = read_convergence_csv(path)
    for a, b in zip(small_study, back):
        assert (a.level, a.h, a.dt, a.l2_error, a.h1_error, a.l2_rate, a.h1_rate) == \
               (b.level, b.h, b.dt, b.l2_error, b.h1_error, b.l2_rate, b.h1_rate)
    # rates recomputed from the emitted errors agree with the emitted rate columns
    for prev, cur in zip(back[:-1], back[1:]):
        assert abs(math.log2(prev.l2_error / cur.l2_error) - cur.l2_rate) <= 1e-12
        assert abs(math.log2(prev.h1_error / cur.h1_error) - cur.h1_rate) <= 1e-12


def test_series_csv_round_trip(tmp_path):
    series = [TimeSeriesRecord(t=0.1 * i, l2_norm=math.exp(-i) / 3, h1_seminorm=math.pi / (i + 7),
                               mu=1 + 1 / (i + 3)) for i in range(1, 30)]
    path = write_series_csv(series, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == ",".join(DECAY_HEADER)
    back = read_series_csv(path)
    assert [(r.t, r.l2_norm, r.h1_seminorm, r.mu) for r in back] == \
           [(r.t, r.l2_norm, r.h1_seminorm, r.mu) for r in series]


def test_csv_header_checked(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_convergence_csv(bad)
    with pytest.raises(ValueError):
        read_series_csv(bad)


@pytest.mark.parametrize("kind", ["decay", "convergence"])
def test_plot_script_is_valid_python(kind, tmp_path):
    script = write_plot_script(tmp_path / "x.csv", kind)
    assert script.name == "x.plot.py"
    compile(script.read_text(), str(script), "exec")
    assert "x.csv" in script.read_text()


def test_fit_recovers_exponential():
    series = [TimeSeriesRecord(t=0.01 * i, l2_norm=2 * math.exp(-3 * 0.01 * i),
                               h1_seminorm=math.exp(-5 * 0.01 * i), mu=1.0) for i in range(1, 101)]
    fit = fit_decay(series)
    assert fit.t_window == (0.5, 1.0)
    assert fit.slope == pytest.approx(-3, rel=1e-10)
    assert fit.slope_h1 == pytest.approx(-5, rel=1e-10)
    assert fit.n_samples == 51 and fit.residual < 1e-10


def test_fit_needs_ten_samples():
    series = [TimeSeriesRecord(t=i, l2_norm=1.0, h1_seminorm=1.0, mu=1.0) for i in range(1, 10)]
    with pytest.raises(ValueError):
        fit_decay(series, window=(1, 9))


def test_degenerate_fit():
    zero = ProblemSpec(name="zero", u0=lambda x, y: 0 * x, f=lambda x, y, t: 0 * x)
    with pytest.raises(DegenerateFitError):
        decay_study(zero, level=1, dt=0.01, t_end=0.3)


def test_decay_study_writes_outputs(tmp_path):
    out = tmp_path / "decay.csv"
    series, fit = decay_study(example3(), level=2, dt=0.005, t_end=0.2, out=out)
    assert len(read_series_csv(out)) == len(series) == 40
    assert (tmp_path / "decay.plot.py").exists()
    assert fit.slope < -2 * np.pi**2 * 0.9
    with pytest.raises(ValueError):
        decay_study(example3(), level=1, dt=0.1, t_end=0.5)


def test_no_exact_solution_rejected():
    with pytest.raises(ValueError):
        convergence_study(example3(), [0])


def test_format_table(small_study):
    text = format_table(small_study)
    assert len(text.splitlines()) == 4


def test_row_defaults():
    row = ConvergenceRow(0, 0.5, 0.25, 1.0, 2.0)
    assert row.l2_rate is None and row.h1_full_error is None
