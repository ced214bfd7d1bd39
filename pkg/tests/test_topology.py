import numpy as np
import pytest

from pdsl.topology import CommGraph, TopologyError, build_topology, spectral_info, validate

VALID = [("full", m) for m in range(1, 21)] + [("ring", m) for m in range(3, 21)] + [
    ("bipartite", m) for m in range(2, 21, 2)
]


def checks(g):
    return {c.name: c for c in validate(g)}


@pytest.mark.parametrize("kind,m", VALID)
def test_generated_graphs_satisfy_invariants(kind, m):
    g = build_topology(kind, m)
    w = g.weights
    assert np.array_equal(w, w.T)
    assert np.all(np.abs(w.sum(axis=0) - 1) <= 1e-12)
    assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-12)
    assert np.all(np.diag(w) > 0)
    assert all(i in g.neighbors[i] for i in range(m))
    assert all(c.passed for c in validate(g))
    assert np.abs(w @ np.ones(m) - 1).max() <= 1e-12


def test_full_four_is_uniform():
    g = build_topology("full", 4)
    assert np.all(g.weights == 0.25)


def test_ring_four_rows():
    g = build_topology("ring", 4)
    t = 1 / 3
    for i in range(4):
        expected = np.zeros(4)
        expected[[i - 1, i, (i + 1) % 4]] = t
        assert np.array_equal(g.weights[i], expected)
    assert g.neighbors[0] == (0, 1, 3)


def test_bipartite_four_by_direct_summation():
    g = build_topology("bipartite", 4)
    w = g.weights.tolist()
    # halves {0,1} and {2,3}: each node has degree 2
    for i in range(4):
        edges = [j for j in range(4) if j != i and w[i][j] > 0]
        assert edges == ([2, 3] if i < 2 else [0, 1])
        for j in edges:
            assert w[i][j] == pytest.approx(1 / 3, abs=1e-15)
        assert w[i][i] == pytest.approx(1 / 3, abs=1e-15)
        row = 0.0
        col = 0.0
        for j in range(4):
            row += w[i][j]
            col += w[j][i]
        assert abs(row - 1) <= 1e-12 and abs(col - 1) <= 1e-12


@pytest.mark.parametrize(
    "kind,m",
    [("ring", 2), ("ring", 0), ("bipartite", 3), ("bipartite", 1), ("full", 0), ("star", 4)],
)
def test_rejects_bad_requests(kind, m):
    with pytest.raises(TopologyError):
        build_topology(kind, m)


@pytest.mark.parametrize("m", range(1, 12))
def test_full_rho_is_zero(m):
    info = spectral_info(build_topology("full", m))
    assert abs(info.rho) <= 1e-9
    assert info.eigenvalues[0] == pytest.approx(1, abs=1e-9)


def test_ring_four_spectrum():
    info = spectral_info(build_topology("ring", 4))
    np.testing.assert_allclose(info.eigenvalues, [1, 1 / 3, 1 / 3, -1 / 3], atol=1e-9)
    assert info.rho == pytest.approx(1 / 9, abs=1e-9)


@pytest.mark.parametrize("m", range(3, 25))
def test_ring_rho_matches_circulant_formula(m):
    lam = [(1 + 2 * np.cos(2 * np.pi * k / m)) / 3 for k in range(m)]
    lam = sorted(lam, reverse=True)
    expected = max(abs(lam[1]), abs(lam[-1])) ** 2
    assert spectral_info(build_topology("ring", m)).rho == pytest.approx(expected, abs=1e-9)


def test_single_agent_spectrum():
    info = spectral_info(build_topology("full", 1))
    assert info.rho == 0
    np.testing.assert_allclose(info.eigenvalues, [1.0])


def test_validate_flags_scaled_row():
    w = build_topology("ring", 5).weights.copy()
    w[2] *= 1.01
    c = checks(w)
    assert not c["doubly_stochastic"].passed
    assert c["doubly_stochastic"].residual == pytest.approx(0.01, rel=1e-9)


def test_validate_flags_asymmetry():
    w = build_topology("full", 4).weights.copy()
    w[0, 1] += 0.05
    w[0, 2] -= 0.05
    c = checks(w)
    assert not c["symmetric"].passed
    assert c["symmetric"].residual == pytest.approx(0.05)


def test_validate_flags_disconnected():
    w = np.eye(4)
    c = checks(w)
    assert not c["connected"].passed
    assert c["doubly_stochastic"].passed


def test_commgraph_rejects_invalid_matrix():
    with pytest.raises(TopologyError, match="symmetric"):
        CommGraph(np.array([[0.5, 0.5], [0.4, 0.6]]))


def test_csv_dump_roundtrips():
    g = build_topology("bipartite", 6)
    rows = [list(map(float, line.split(","))) for line in g.to_csv().strip().split("\n")]
    assert np.array_equal(np.array(rows), g.weights)


def test_weights_are_read_only():
    g = build_topology("ring", 5)
    with pytest.raises(ValueError):
        g.weights[0, 0] = 1.0
