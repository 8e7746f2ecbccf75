"""The evaluation harness: initial-table generation, the convergence
metric, config parsing, and deterministic exports.

Initial tables blend an independent law with a dependent one
(lambda = 1 is pure independence) and are rounded to integer counts
by largest remainder, so the generated table always sums to n.
"""

import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiberwalk.bench import (
    BenchRun,
    ExperimentConfig,
    convergence_step,
    describe_schedule,
    export_results,
    generate_initial_n3f,
    generate_initial_quasi,
    generate_initial_two_way,
    parse_config,
    round_largest_remainder,
    run_evaluation,
)
from fiberwalk.sampling import SamplerConfig
from fiberwalk.walk import Alternating, MovesOnly, ParallelStarts, SatOnly


# -- rounding


def test_round_largest_remainder_hand_case():
    # weights arrive pre-scaled to the target total
    got = round_largest_remainder([5.0, 2.5, 2.5], 10)
    assert sum(got) == 10
    assert got[0] == 5 and sorted(got[1:]) == [2, 3]
    # ties go to the lower index
    assert got == [5, 3, 2]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=8),
    st.integers(min_value=0, max_value=50),
)
def test_round_largest_remainder_preserves_total(weights, total):
    s = sum(weights)
    scaled = [w * total / s for w in weights]
    got = round_largest_remainder(scaled, total)
    assert sum(got) == total
    assert all(c >= 0 for c in got)
    # each count is within one unit of its scaled weight
    assert all(abs(c - w) < 1.0 for c, w in zip(got, scaled))


# -- generators


def test_generate_two_way_margins_positive():
    for seed in range(5):
        u = generate_initial_two_way((3, 4), 30, 0.5, seed)
        arr = u.to_array()
        assert arr.sum() == 30
        assert (arr.sum(axis=0) > 0).all()
        assert (arr.sum(axis=1) > 0).all()


def test_generate_two_way_deterministic():
    a = generate_initial_two_way((3, 3), 24, 0.25, 7)
    b = generate_initial_two_way((3, 3), 24, 0.25, 7)
    assert a == b


def test_generate_two_way_lambda_one_is_flatter():
    # lambda = 1 is the independent blend; lambda = 0 concentrates on
    # the wrapped diagonal
    indep = generate_initial_two_way((4, 4), 64, 1.0, 3).to_array()
    dep = generate_initial_two_way((4, 4), 64, 0.0, 3).to_array()
    assert dep.max() > indep.max()


def test_generate_quasi_avoids_zeros():
    u, zeros = generate_initial_quasi((4, 4), 20, 0.5, 11)
    assert u.n == 20
    assert zeros
    for j in zeros:
        assert u.cells[j] == 0


def test_generate_n3f_sums_to_n():
    u = generate_initial_n3f(2, 16, SamplerConfig(), 5)
    assert u.shape == (2, 2, 2)
    assert u.n == 16


# -- the convergence metric


def test_convergence_step_constant_sequence():
    assert convergence_step([0.3, 0.3, 0.3], 0.3) == 1


def test_convergence_step_documented_example():
    seq = [0.5, 0.2, 0.101, 0.1, 0.1004, 0.0996]
    assert convergence_step(seq, 0.1, tol=0.005) == 3


def test_convergence_step_none_when_last_violates():
    assert convergence_step([0.1, 0.1, 0.5], 0.1, tol=0.005) is None


def test_convergence_step_empty_raises():
    with pytest.raises(ValueError):
        convergence_step([], 0.1)


def test_convergence_step_single_element():
    assert convergence_step([0.1], 0.1) == 1
    assert convergence_step([0.9], 0.1) is None


# -- schedule descriptions


def test_describe_schedule():
    assert describe_schedule(MovesOnly()) == "moves-only"
    assert describe_schedule(SatOnly()) == "sat-only"
    assert "10" in describe_schedule(Alternating(10))
    text = describe_schedule(ParallelStarts(5, 4))
    assert "5" in text and "4" in text


# -- config files


def test_parse_config_round_trip(tmp_path):
    cfg_text = """
[experiment]
model = independence
shape = 3, 3
n = 18
runs = 4
steps = 250
seed = 42
lambdas = 0.0, 0.5, 1.0
tolerance = 0.01

[schedule]
kind = alternating
period = 10

[sampler]
kind = internal-uniform

[moves]
source = cycle
"""
    path = tmp_path / "exp.ini"
    path.write_text(cfg_text)
    cfg = parse_config(path)
    assert cfg.model == "independence"
    assert cfg.shape == (3, 3)
    assert cfg.n == 18
    assert cfg.runs == 4
    assert cfg.steps == 250
    assert cfg.seed == 42
    assert cfg.lambdas == (0.0, 0.5, 1.0)
    assert cfg.tol == 0.01
    assert isinstance(cfg.schedule, Alternating) and cfg.schedule.n == 10
    assert cfg.sampler.kind == "internal-uniform"
    assert cfg.move_source == "cycle"


def test_parse_config_requires_experiment_core(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nmodel = independence\n")
    with pytest.raises(ValueError, match="shape"):
        parse_config(path)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ValueError, match="cannot read"):
        parse_config(tmp_path / "nope.ini")


# -- running and exporting


def small_config(**kw):
    base = dict(
        model="independence",
        shape=(2, 2),
        n=8,
        runs=3,
        steps=200,
        schedule=Alternating(5),
        sampler=SamplerConfig(kind="internal-uniform"),
        lambdas=(0.5, 1.0),
        seed=17,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_evaluation_produces_complete_records():
    records = run_evaluation(small_config())
    assert len(records) == 3
    for rec in records:
        assert rec.error is None
        assert rec.exact_p is not None  # tiny fiber, exact reference
        assert len(rec.p_sequence) == 200
        assert rec.final_p == pytest.approx(rec.p_sequence[-1])
        assert rec.sat_steps + rec.move_steps == 200


def test_run_evaluation_deterministic():
    a = run_evaluation(small_config())
    b = run_evaluation(small_config())
    assert [r.final_p for r in a] == [r.final_p for r in b]
    assert [r.convergence_step for r in a] == [r.convergence_step for r in b]


def test_export_files_and_determinism(tmp_path):
    records = run_evaluation(small_config())
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    export_results(records, out1)
    export_results(run_evaluation(small_config()), out2)
    names = sorted(p.name for p in out1.iterdir())
    assert "summary.csv" in names
    assert "plot.svg" in names
    assert "run_001.csv" in names
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    header = (out1 / "summary.csv").read_text().splitlines()[0]
    assert header == "run,convergence_step,final_p,exact_p,sat_steps,move_steps"
    run_header = (out1 / "run_001.csv").read_text().splitlines()[0]
    assert run_header == "step,p"


def test_export_failures_file(tmp_path):
    records = [
        BenchRun(0, None, 0.5, (), None, None, None, "alternating(5)", 0, 0, None,
                 error="generator exploded"),
    ]
    export_results(records, tmp_path)
    text = (tmp_path / "failures.csv").read_text()
    assert text.splitlines()[0] == "run,error"
    assert "generator exploded" in text
    # summary still written, with no data rows
    assert (tmp_path / "summary.csv").read_text().count("\n") == 1


def test_plot_is_valid_svg(tmp_path):
    records = run_evaluation(small_config())
    export_results(records, tmp_path)
    root = ET.parse(tmp_path / "plot.svg").getroot()
    assert root.tag.endswith("svg")
