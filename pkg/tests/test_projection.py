import numpy as np
import pytest

from triplestream.exceptions import ConfigError, DegenerateDistancesError
from triplestream.projection import (
    TsneConfig,
    calibrate_affinities,
    conditional_affinities,
    export_kl_trace,
    export_layout,
    kl_divergence,
    perplexities,
    read_layout,
    tsne,
)

import gradcases
from oracles import perplexity_from_row


def test_equidistant_neighbours_give_uniform_row():
    x = np.eye(5)  # every pair at distance sqrt(2)
    cond, _ = conditional_affinities(x, 4.0)
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(cond[off], 0.25, atol=1e-12)


def test_joint_symmetric_and_normalised():
    p = calibrate_affinities(np.random.default_rng(0).normal(size=(12, 3)), 4.0)
    np.testing.assert_allclose(p, p.T, atol=0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diag(p) == 0)


@pytest.mark.parametrize("seed", range(3))
def test_bisection_hits_target_perplexity(seed):
    x = np.random.default_rng(seed).normal(size=(5, 3))
    cond, _ = conditional_affinities(x, 3.0)
    for row in cond:
        assert abs(np.log2(perplexity_from_row(row)) - np.log2(3.0)) <= 1e-3
    np.testing.assert_allclose(perplexities(cond), [perplexity_from_row(r) for r in cond])


def test_affinity_errors():
    with pytest.raises(ConfigError):
        conditional_affinities(np.random.default_rng(0).normal(size=(5, 2)), 5.0)
    with pytest.raises(DegenerateDistancesError):
        conditional_affinities(np.zeros((4, 2)), 2.0)


@pytest.fixture(scope="module")
def run():
    x = np.random.default_rng(4).normal(size=(40, 5))
    return x, tsne(x, TsneConfig(perplexity=8.0, iterations=200))


def test_kl_decreases_and_stays_nonnegative(run):
    _, (layout, trace) = run
    assert len(trace) == 201
    assert trace[-1] < trace[0]
    assert np.all(trace >= 0)
    assert layout.shape == (40, 2)


def test_trace_matches_recomputed_kl(run):
    x, (layout, trace) = run
    assert trace[-1] == pytest.approx(kl_divergence(calibrate_affinities(x, 8.0), layout), abs=1e-12)


def test_deterministic_for_seed(run):
    x, (layout, _) = run
    again, _ = tsne(x, TsneConfig(perplexity=8.0, iterations=200))
    np.testing.assert_array_equal(layout, again)


@pytest.mark.parametrize("seed", range(5))
def test_kl_gradient_matches_finite_differences(seed):
    assert gradcases.run_tsne_case(seed) <= gradcases.GRAD_TOLERANCE


def test_config_validation():
    with pytest.raises(ConfigError):
        TsneConfig(output_dim=3)
    with pytest.raises(ConfigError):
        tsne(np.random.default_rng(0).normal(size=(5, 2)), TsneConfig(perplexity=4.0))


def test_layout_roundtrip(tmp_path, run):
    _, (layout, _) = run
    labels = np.arange(40) % 7
    path = tmp_path / "layout.csv"
    export_layout(layout, labels, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,label" and len(lines) == 41
    back, back_labels = read_layout(path)
    np.testing.assert_allclose(back, layout, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(back_labels, labels)


def test_kl_trace_file(tmp_path, run):
    _, (_, trace) = run
    path = tmp_path / "kl.csv"
    export_kl_trace(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,kl" and len(lines) == len(trace) + 1
    assert float(lines[-1].split(",")[1]) == pytest.approx(trace[-1], rel=1e-11)
