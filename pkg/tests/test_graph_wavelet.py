import warnings

import numpy as np
import pytest

from stsg.graph_wavelet import (
    GraphError,
    HaarChannelSet,
    OverlapUnsupportedError,
    SensorGraph,
    build_decomposition,
    decomposition_from_text,
    haar_analyze,
    haar_analyze_series,
    haar_synthesize,
    path_graph,
)


# ---------------------------------------------------------------------------
# Oracle: materialize every channel's basis vector by composing the hierarchy
# bottom-up, independently of the production recursion.  For a folder with
# children (a, b) the scaling vector is basis(a) + basis(b) and the wavelet
# vector basis(a) - basis(b); a singleton's basis is its vertex indicator.
# ---------------------------------------------------------------------------

def materialize_basis(dec):
    n = dec.graph.vertex_count
    scaling = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        scaling.append(e)
    per_level = {0: (scaling, {})}
    for k in range(1, dec.max_level + 1):
        prev = per_level[k - 1][0]
        scal_k, wav_k = [], {}
        for i, folder in enumerate(dec.levels[k]):
            if len(folder.children) == 1:
                scal_k.append(prev[folder.children[0]].copy())
            else:
                a, b = folder.children
                scal_k.append(prev[a] + prev[b])
                wav_k[i] = prev[a] - prev[b]
        per_level[k] = (scal_k, wav_k)
    basis = {}
    for (k, i, j) in dec.channel_index:
        basis[(k, i, j)] = per_level[k][0][i] if j == 0 else per_level[k][1][i]
    return basis


def oracle_analyze(dec, x):
    basis = materialize_basis(dec)
    return np.array([basis[key] @ x for key in dec.channel_index])


def all_perfect_matchings(n_items, allowed_pairs):
    """Enumerate perfect matchings of {0..n-1} restricted to allowed pairs."""
    def rec(remaining):
        if not remaining:
            yield []
            return
        first = min(remaining)
        for other in sorted(remaining - {first}):
            if (first, other) in allowed_pairs:
                for rest in rec(remaining - {first, other}):
                    yield [(first, other)] + rest
    return list(rec(frozenset(range(n_items))))


def all_levels(n):
    return range(1, int(np.floor(np.log2(n))) + 1) if n > 1 else [0]


# ---------------------------------------------------------------------------
# build_decomposition
# ---------------------------------------------------------------------------

def test_two_vertex_single_pairing():
    dec = build_decomposition(path_graph(2), 1)
    (folder,) = dec.levels[1]
    assert folder.members == frozenset({0, 1})
    a, b = folder.children
    assert dec.levels[0][a].members == frozenset({0})
    assert dec.levels[0][b].members == frozenset({1})


def test_four_path_greedy_matches_enumeration_oracle():
    g = path_graph(4)
    dec = build_decomposition(g, 2)
    got = {frozenset(f.members) for f in dec.levels[1]}

    # Oracle: enumerate all perfect matchings of the path restricted to
    # graph edges, then apply the greedy-by-lowest-index selection rule.
    matchings = all_perfect_matchings(4, {(0, 1), (1, 2), (2, 3)})
    greedy_pick = min(matchings, key=lambda m: sorted(m))
    assert got == {frozenset(p) for p in greedy_pick}
    assert got == {frozenset({0, 1}), frozenset({2, 3})}
    assert dec.levels[2][0].members == frozenset(range(4))


def test_center_overlap_three_folder_example():
    # Three level-1 folders on a line: the middle one must feed both parents.
    from stsg.graph_wavelet import Folder, _pair_level_center

    g = path_graph(6)
    l1 = (Folder(1, frozenset({0, 1}), (0, 1)),
          Folder(1, frozenset({2, 3}), (2, 3)),
          Folder(1, frozenset({4, 5}), (4, 5)))
    parents = _pair_level_center(g, l1, 2)
    got = [frozenset(f.members) for f in parents]
    assert got == [frozenset({0, 1, 2, 3}), frozenset({2, 3, 4, 5})]
    assert [f.children for f in parents] == [(0, 1), (1, 2)]


def test_center_overlap_interior_folders_have_two_parents():
    dec = build_decomposition(path_graph(8), 3, overlap="center")
    level2 = dec.levels[2]
    assert len(level2) == len(dec.levels[1]) - 1
    child_uses = [0] * len(dec.levels[1])
    for f in level2:
        for c in f.children:
            child_uses[c] += 1
    assert child_uses[0] == 1 and child_uses[-1] == 1
    assert all(u == 2 for u in child_uses[1:-1])


def test_empty_graph_rejected():
    with pytest.raises(GraphError):
        SensorGraph(0, np.zeros((0, 2)), frozenset())


def test_max_level_bounds():
    g = path_graph(5)
    with pytest.raises(GraphError):
        build_decomposition(g, 3)  # floor(log2 5) = 2
    assert build_decomposition(g, 2).max_level == 2


def test_carry_rule_odd_folder_count():
    dec = build_decomposition(path_graph(5), 2)
    carried = [f for f in dec.levels[1] if len(f.children) == 1]
    assert len(carried) == 1
    keys = set(dec.channel_index)
    i = dec.levels[1].index(carried[0])
    assert (1, i, 0) in keys and (1, i, 1) not in keys


def test_disconnected_pairing_warns_not_silent():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [6.0, 0.0]])
    g = SensorGraph(4, pos, frozenset([(0, 1), (2, 3)]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dec = build_decomposition(g, 2)
        assert any("adjacent" in str(w.message) for w in caught)
    assert dec.levels[2][0].members == frozenset(range(4))


def test_pairing_deterministic(small_graph_fixtures):
    for g in small_graph_fixtures:
        for j in all_levels(g.vertex_count):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                d1 = build_decomposition(g, j)
                d2 = build_decomposition(g, j)
            assert d1.to_text() == d2.to_text()


def test_graph_invariants():
    with pytest.raises(GraphError):
        SensorGraph(2, np.zeros((2, 2)), frozenset([(0, 0)]))  # self loop
    with pytest.raises(GraphError):
        SensorGraph(2, np.zeros((2, 2)), frozenset([(0, 5)]))  # out of range
    with pytest.raises(GraphError):
        SensorGraph(2, np.array([[0.0, 0.0], [np.inf, 0.0]]), frozenset())


# ---------------------------------------------------------------------------
# haar_analyze
# ---------------------------------------------------------------------------

def test_two_vertex_sum_and_difference():
    dec = build_decomposition(path_graph(2), 1)
    a, b = 3.5, -1.25
    ch = haar_analyze(dec, [a, b])
    assert ch.channel(1, 0, 0) == a + b
    assert ch.channel(1, 0, 1) == a - b


def test_constant_signal_kills_wavelet_channels():
    for n in (4, 6, 8):
        dec = build_decomposition(path_graph(n), int(np.log2(n)) if n != 6 else 2)
        ch = haar_analyze(dec, np.full(n, 7.0))
        for pos, (k, i, j) in enumerate(ch.index):
            if j == 1:
                assert ch.values[pos] == 0.0


def test_eight_vertex_recursion_equals_materialized_inner_products():
    rng = np.random.default_rng(42)
    dec = build_decomposition(path_graph(8), 3)
    x = rng.normal(size=8)
    got = haar_analyze(dec, x).values
    want = oracle_analyze(dec, x)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_analyze_rejects_bad_input():
    dec = build_decomposition(path_graph(4), 2)
    with pytest.raises(GraphError):
        haar_analyze(dec, [1.0, 2.0])
    with pytest.raises(GraphError):
        haar_analyze(dec, [1.0, 2.0, np.nan, 4.0])


def test_brute_force_equivalence_all_small_graphs(small_graph_fixtures):
    rng = np.random.default_rng(7)
    for g in small_graph_fixtures:
        for j in all_levels(g.vertex_count):
            for overlap in ("none", "center"):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    dec = build_decomposition(g, j, overlap=overlap)
                x = rng.normal(size=g.vertex_count)
                got = haar_analyze(dec, x).values
                want = oracle_analyze(dec, x)
                np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_non_overlap_basis_equals_member_indicators(small_graph_fixtures):
    # For disjoint folders the composed scaling vector is the membership
    # indicator and the wavelet the +-1 split over the two children.
    for g in small_graph_fixtures[:6]:
        j = max(all_levels(g.vertex_count))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dec = build_decomposition(g, j)
        basis = materialize_basis(dec)
        for (k, i, jj), vec in basis.items():
            folder = dec.levels[k][i]
            if jj == 0:
                ind = np.zeros(g.vertex_count)
                ind[sorted(folder.members)] = 1.0
                np.testing.assert_array_equal(vec, ind)
            else:
                a, b = folder.children
                ind = np.zeros(g.vertex_count)
                ind[sorted(dec.levels[k - 1][a].members)] = 1.0
                ind[sorted(dec.levels[k - 1][b].members)] -= 1.0
                np.testing.assert_array_equal(vec, ind)


def test_orthogonality_exact_integer(small_graph_fixtures):
    for g in small_graph_fixtures:
        j = max(all_levels(g.vertex_count))
        if j == 0:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dec = build_decomposition(g, j)
        basis = materialize_basis(dec)
        wavelets = [vec.astype(np.int64)
                    for (k, i, jj), vec in sorted(basis.items()) if jj == 1]
        for a in range(len(wavelets)):
            for b in range(a + 1, len(wavelets)):
                assert int(wavelets[a] @ wavelets[b]) == 0


def test_linearity():
    rng = np.random.default_rng(3)
    dec = build_decomposition(path_graph(8), 3, overlap="center")
    x, y = rng.normal(size=8), rng.normal(size=8)
    a, b = 2.5, -0.75
    lhs = haar_analyze(dec, a * x + b * y).values
    rhs = a * haar_analyze(dec, x).values + b * haar_analyze(dec, y).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_overlap_redundancy_channel_count():
    for n in (6, 8):
        g = path_graph(n)
        plain = build_decomposition(g, 2)
        redundant = build_decomposition(g, 2, overlap="center")
        # level-2 channel count strictly larger with >= 3 level-1 folders
        plain_l2 = sum(1 for (k, _, _) in plain.channel_index if k == 2)
        red_l2 = sum(1 for (k, _, _) in redundant.channel_index if k == 2)
        assert red_l2 > plain_l2


def test_channel_count_formula_n8():
    dec = build_decomposition(path_graph(8), 3)
    want = sum(2 * (8 >> k) for k in range(1, 4))  # 2 * 2^-k * 8 summed
    assert dec.channel_count == want == 14


# ---------------------------------------------------------------------------
# haar_analyze_series
# ---------------------------------------------------------------------------

def test_series_single_row_matches_vertex_transform():
    rng = np.random.default_rng(5)
    dec = build_decomposition(path_graph(8), 3)
    x = rng.normal(size=8)
    single = haar_analyze(dec, x).values
    series = haar_analyze_series(dec, x[None, :]).values
    np.testing.assert_array_equal(series[:, 0], single)


def test_series_commutes_with_time_shift():
    rng = np.random.default_rng(6)
    dec = build_decomposition(path_graph(4), 2)
    rec = rng.normal(size=(16, 4))
    shifted = np.roll(rec, 5, axis=0)
    out = haar_analyze_series(dec, rec).values
    out_shifted = haar_analyze_series(dec, shifted).values
    np.testing.assert_array_equal(np.roll(out, 5, axis=1), out_shifted)


def test_series_channel_count_and_shape():
    rng = np.random.default_rng(8)
    dec = build_decomposition(path_graph(8), 3)
    rec = rng.normal(size=(10, 8))
    ch = haar_analyze_series(dec, rec)
    assert ch.values.shape == (14, 10)


def test_trivial_decomposition_passthrough():
    g = SensorGraph(1, np.zeros((1, 2)), frozenset())
    dec = build_decomposition(g, 0)
    rec = np.arange(6.0)[:, None]
    ch = haar_analyze_series(dec, rec)
    assert ch.values.shape == (1, 6)
    np.testing.assert_array_equal(ch.values[0], rec[:, 0])


# ---------------------------------------------------------------------------
# haar_synthesize
# ---------------------------------------------------------------------------

def test_delta_reconstruction_two_vertices():
    dec = build_decomposition(path_graph(2), 1)
    ch = HaarChannelSet(np.array([1.0, 1.0]), dec.channel_index)
    np.testing.assert_array_equal(haar_synthesize(dec, ch), [1.0, 0.0])


def test_round_trip_identity(small_graph_fixtures):
    rng = np.random.default_rng(9)
    for g in small_graph_fixtures:
        for j in all_levels(g.vertex_count):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dec = build_decomposition(g, j)
            x = rng.normal(size=g.vertex_count)
            back = haar_synthesize(dec, haar_analyze(dec, x))
            np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12)


def test_synthesize_rejects_overlap():
    dec = build_decomposition(path_graph(6), 2, overlap="center")
    ch = haar_analyze(dec, np.arange(6.0))
    with pytest.raises(OverlapUnsupportedError):
        haar_synthesize(dec, ch)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_decomposition_text_round_trip():
    g = path_graph(8)
    for overlap in ("none", "center"):
        dec = build_decomposition(g, 3, overlap=overlap)
        back = decomposition_from_text(dec.to_text(), g)
        assert back.to_text() == dec.to_text()
        assert back.channel_index == dec.channel_index
