import csv
import math

import numpy as np
import pytest

from openvocab.embeddings import Phrase
from openvocab.errors import DivergenceError
from openvocab.graph import AnswerGraph, NodeRecord, pair_index
from openvocab.verbalizer import (
    VerbalizerLayer,
    VerbalizerModel,
    attention_scores,
    export_attention_csv,
    forward,
    propagate_layer,
    segment_softmax,
    smooth_embeddings,
    verbalizer_gradients,
)


def make_graph(rng, n_orig, n_aug, dim, p_edge=0.5):
    """Random graph shaped like the builder's output: hop-0 answers first,
    no edges between two originals, self loops implicit."""
    labels = [f"a{i:02d}" for i in range(n_orig)] + [f"w{i:02d}" for i in range(n_aug)]
    n = n_orig + n_aug
    nodes = [
        NodeRecord(Phrase(t), 0 if i < n_orig else 1, rng.normal(size=dim))
        for i, t in enumerate(labels)
    ]
    edges = set()
    for d in range(n):
        for s in range(n):
            if s != d and rng.random() < p_edge:
                edges.add((s, d))
    edges = {(s, d) for (s, d) in edges if not (s < n_orig and d < n_orig)}
    return AnswerGraph(nodes, edges, set(range(n_orig)), dim)


def oracle_layer(w_src, w_dst, h, graph, slope):
    """Pure-Python replay of one layer: bilinear score, LeakyReLU,
    max-subtracted softmax per destination, weighted sum."""
    n = h.shape[0]
    out = np.zeros_like(h)
    alphas = {}
    for i in range(n):
        nbrs = sorted({i} | {s for (s, d) in graph.edges if d == i})
        scores = []
        for j in nbrs:
            z = float(np.dot(w_dst @ h[i], w_src @ h[j]))
            scores.append(z if z >= 0.0 else slope * z)
        mx = max(scores)
        exps = [math.exp(e - mx) for e in scores]
        tot = sum(exps)
        for j, ex in zip(nbrs, exps):
            a = ex / tot
            alphas[(i, j)] = a
            out[i] += a * h[j]
    return out, alphas


def random_model(rng, dim, n_layers=2, epsilon=0.6, slope=0.2):
    layers = [
        VerbalizerLayer(
            np.eye(dim) + 0.3 * rng.normal(size=(dim, dim)),
            np.eye(dim) + 0.3 * rng.normal(size=(dim, dim)),
        )
        for _ in range(n_layers)
    ]
    return VerbalizerModel(layers, epsilon, slope)


class TestSegmentSoftmax:
    def test_matches_scalar_softmax(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            sizes = rng.integers(1, 6, size=rng.integers(1, 8))
            starts = np.concatenate(([0], np.cumsum(sizes)))
            scores = rng.normal(scale=3.0, size=int(starts[-1]))
            got = segment_softmax(scores, starts)
            for seg, (a, b) in enumerate(zip(starts[:-1], starts[1:])):
                exps = [math.exp(s - max(scores[a:b])) for s in scores[a:b]]
                want = np.array(exps) / sum(exps)
                assert np.allclose(got[a:b], want, rtol=1e-13, atol=0.0)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        sizes = rng.integers(1, 9, size=40)
        starts = np.concatenate(([0], np.cumsum(sizes)))
        scores = rng.normal(scale=50.0, size=int(starts[-1]))
        out = segment_softmax(scores, starts)
        sums = np.add.reduceat(out, starts[:-1])
        assert np.max(np.abs(sums - 1.0)) < 1e-9

    def test_dyadic_shift_is_bitwise_invariant(self):
        # Dyadic scores and shifts make every subtraction exact, so equal
        # outputs must be bit-for-bit, not merely close.
        rng = np.random.default_rng(2)
        sizes = rng.integers(1, 7, size=25)
        starts = np.concatenate(([0], np.cumsum(sizes)))
        scores = rng.integers(-40, 40, size=int(starts[-1])) / 16.0
        shifts = rng.integers(-8, 8, size=25) / 4.0
        shifted = scores + np.repeat(shifts, sizes)
        assert np.array_equal(
            segment_softmax(scores, starts), segment_softmax(shifted, starts)
        )

    def test_huge_scores_stay_finite(self):
        starts = np.array([0, 3])
        out = segment_softmax(np.array([1e4, 1e4 - 5.0, 1e4 - 700.0]), starts)
        assert np.isfinite(out).all()
        assert abs(out.sum() - 1.0) < 1e-12


class TestModelValidation:
    def test_initialize_is_seeded_and_near_identity(self):
        a = VerbalizerModel.initialize(5, n_layers=2, seed=42)
        b = VerbalizerModel.initialize(5, n_layers=2, seed=42)
        c = VerbalizerModel.initialize(5, n_layers=2, seed=43)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.w_src, lb.w_src)
            assert np.array_equal(la.w_dst, lb.w_dst)
        assert not np.array_equal(a.layers[0].w_src, c.layers[0].w_src)
        for layer in a.layers:
            for w in (layer.w_src, layer.w_dst):
                assert np.max(np.abs(w - np.eye(5))) <= 0.01

    @pytest.mark.parametrize("epsilon", [-0.1, 1.0001])
    def test_epsilon_range(self, epsilon):
        with pytest.raises(ValueError):
            VerbalizerModel([VerbalizerLayer(np.eye(2), np.eye(2))], epsilon)

    def test_rejects_empty_or_ragged(self):
        with pytest.raises(ValueError):
            VerbalizerModel([], 0.5)
        with pytest.raises(ValueError):
            VerbalizerModel(
                [VerbalizerLayer(np.eye(2), np.eye(3))], 0.5
            )


class TestLayerForward:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(6):
            dim = int(rng.integers(1, 5))
            graph = make_graph(rng, int(rng.integers(1, 4)), int(rng.integers(0, 5)), dim)
            model = random_model(rng, dim, n_layers=1)
            h = graph.feature_matrix()
            want, want_alpha = oracle_layer(
                model.layers[0].w_src, model.layers[0].w_dst, h, graph, model.leaky_slope
            )
            got = propagate_layer(model, 0, h, graph)
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)
            att = attention_scores(model, 0, h, graph)
            for (i, j), a in want_alpha.items():
                assert att.row(i)[j] == pytest.approx(a, rel=1e-12)

    def test_tiny_case_by_hand(self):
        # two nodes, one edge 1 -> 0, identity weights, dim 1
        nodes = [
            NodeRecord(Phrase("a"), 0, np.array([1.0])),
            NodeRecord(Phrase("w"), 1, np.array([2.0])),
        ]
        graph = AnswerGraph(nodes, {(1, 0)}, {0}, 1)
        model = VerbalizerModel([VerbalizerLayer(np.eye(1), np.eye(1))], 0.5)
        h = propagate_layer(model, 0, graph.feature_matrix(), graph)
        # node 0: scores [1*1, 1*2] -> softmax([1, 2])
        a01 = math.exp(2.0 - 2.0) / (math.exp(1.0 - 2.0) + math.exp(2.0 - 2.0))
        a00 = 1.0 - a01
        assert h[0, 0] == pytest.approx(a00 * 1.0 + a01 * 2.0, rel=1e-15)
        assert h[1, 0] == pytest.approx(2.0)  # isolated: self attention only

    def test_negative_scores_use_leaky_slope(self):
        # antiparallel 1-D features make the cross score negative
        nodes = [
            NodeRecord(Phrase("a"), 0, np.array([1.0])),
            NodeRecord(Phrase("w"), 1, np.array([-3.0])),
        ]
        graph = AnswerGraph(nodes, {(1, 0)}, {0}, 1)
        slope = 0.2
        model = VerbalizerModel([VerbalizerLayer(np.eye(1), np.eye(1))], 0.5, slope)
        att = attention_scores(model, 0, graph.feature_matrix(), graph)
        scores = [1.0, slope * -3.0]  # self 1*1, cross 1*-3 through the slope
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        assert att.row(0)[1] == pytest.approx(exps[1] / sum(exps), rel=1e-13)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        graph = make_graph(rng, 4, 8, 3)
        model = random_model(rng, 3)
        h = graph.feature_matrix()
        for layer in range(model.n_layers):
            att = attention_scores(model, layer, h, graph)
            assert np.max(np.abs(att.row_sums() - 1.0)) < 1e-9
            h = propagate_layer(model, layer, h, graph)

    def test_aggregation_never_expands_the_range(self):
        # each output coordinate is a convex combination of neighborhood
        # inputs, so the extremes cannot grow
        rng = np.random.default_rng(5)
        for _ in range(8):
            graph = make_graph(rng, 3, 6, 2)
            model = random_model(rng, 2, n_layers=3)
            h = graph.feature_matrix()
            for layer in range(model.n_layers):
                nxt = propagate_layer(model, layer, h, graph)
                assert nxt.max() <= h.max() + 1e-12
                assert nxt.min() >= h.min() - 1e-12
                h = nxt

    def test_bad_layer_and_shape_rejected(self):
        rng = np.random.default_rng(6)
        graph = make_graph(rng, 2, 2, 2)
        model = random_model(rng, 2)
        h = graph.feature_matrix()
        with pytest.raises(IndexError):
            attention_scores(model, 2, h, graph)
        with pytest.raises(ValueError):
            attention_scores(model, 0, h[:, :1], graph)

    def test_overflowing_features_raise_divergence(self):
        nodes = [
            NodeRecord(Phrase("a"), 0, np.array([1e300])),
            NodeRecord(Phrase("w"), 1, np.array([1e300])),
        ]
        graph = AnswerGraph(nodes, {(1, 0)}, {0}, 1)
        model = VerbalizerModel([VerbalizerLayer(np.eye(1), np.eye(1))], 0.5)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError):
                attention_scores(model, 0, graph.feature_matrix(), graph)


class TestForward:
    def test_two_layer_unroll(self):
        rng = np.random.default_rng(7)
        graph = make_graph(rng, 3, 5, 3)
        model = random_model(rng, 3, n_layers=2, epsilon=0.4)
        fwd = forward(model, graph)
        h = graph.feature_matrix()
        h1 = propagate_layer(model, 0, h, graph)
        h2 = propagate_layer(model, 1, h1, graph)
        orig = graph.original_rows()
        want = 0.4 * h[orig] + 0.6 * h2[orig]
        assert np.array_equal(fwd.smoothed, want)
        assert np.array_equal(fwd.hidden[1], h1)
        assert np.array_equal(fwd.hidden[2], h2)

    def test_epsilon_one_is_bitwise_passthrough(self):
        rng = np.random.default_rng(8)
        graph = make_graph(rng, 4, 6, 3)
        model = random_model(rng, 3, epsilon=1.0)
        fwd = forward(model, graph)
        assert fwd.epsilon_one
        assert fwd.alphas == [] and fwd.scores == []
        orig = graph.original_rows()
        assert np.array_equal(fwd.smoothed, graph.feature_matrix()[orig])

    def test_epsilon_zero_is_pure_propagation(self):
        rng = np.random.default_rng(9)
        graph = make_graph(rng, 3, 4, 2)
        model = random_model(rng, 2, epsilon=0.0)
        fwd = forward(model, graph)
        h = graph.feature_matrix()
        for layer in range(model.n_layers):
            h = propagate_layer(model, layer, h, graph)
        assert np.array_equal(fwd.smoothed, h[graph.original_rows()])

    def test_smoothed_rows_follow_sorted_answers(self):
        rng = np.random.default_rng(10)
        graph = make_graph(rng, 4, 3, 2)
        model = random_model(rng, 2)
        emb = smooth_embeddings(model, graph)
        assert [p.text for p in emb.answers] == sorted(p.text for p in emb.answers)
        assert emb.matrix.shape == (4, 2)


class TestGradients:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(11)
        graph = make_graph(rng, 3, 5, 3)
        model = random_model(rng, 3, n_layers=2, epsilon=0.55)
        upstream = rng.normal(size=(3, 3))

        def loss(m):
            return float(np.sum(forward(m, graph).smoothed * upstream))

        cache = forward(model, graph)
        grads = verbalizer_gradients(model, graph, upstream, cache)
        step = 1e-6
        for l, (dw_src, dw_dst) in enumerate(grads):
            for name, analytic in (("w_src", dw_src), ("w_dst", dw_dst)):
                w = getattr(model.layers[l], name)
                for r in range(w.shape[0]):
                    for c in range(w.shape[1]):
                        keep = w[r, c]
                        w[r, c] = keep + step
                        up = loss(model)
                        w[r, c] = keep - step
                        down = loss(model)
                        w[r, c] = keep
                        fd = (up - down) / (2.0 * step)
                        scale = max(abs(fd), abs(analytic[r, c]), 1e-8)
                        assert abs(fd - analytic[r, c]) / scale < 1e-4, (
                            f"layer {l} {name}[{r},{c}]: fd={fd} analytic={analytic[r, c]}"
                        )

    def test_epsilon_scaling_of_gradients(self):
        # the only epsilon dependence is the (1 - epsilon) factor on the
        # smoothed output, so gradients scale linearly with it
        rng = np.random.default_rng(12)
        graph = make_graph(rng, 3, 4, 2)
        base = random_model(rng, 2, epsilon=0.2)
        other = VerbalizerModel(
            [VerbalizerLayer(l.w_src.copy(), l.w_dst.copy()) for l in base.layers],
            0.6,
            base.leaky_slope,
        )
        upstream = rng.normal(size=(3, 2))
        g_base = verbalizer_gradients(base, graph, upstream, forward(base, graph))
        g_other = verbalizer_gradients(other, graph, upstream, forward(other, graph))
        for (s_a, d_a), (s_b, d_b) in zip(g_base, g_other):
            assert np.allclose(s_b, s_a * (0.4 / 0.8), rtol=1e-12)
            assert np.allclose(d_b, d_a * (0.4 / 0.8), rtol=1e-12)

    def test_epsilon_one_gradients_are_exact_zeros(self):
        rng = np.random.default_rng(13)
        graph = make_graph(rng, 3, 4, 2)
        model = random_model(rng, 2, epsilon=1.0)
        cache = forward(model, graph)
        grads = verbalizer_gradients(model, graph, rng.normal(size=(3, 2)), cache)
        for dw_src, dw_dst in grads:
            assert not dw_src.any() and not dw_dst.any()

    def test_cache_required(self):
        rng = np.random.default_rng(14)
        graph = make_graph(rng, 2, 2, 2)
        model = random_model(rng, 2)
        with pytest.raises(ValueError, match="cache"):
            verbalizer_gradients(model, graph, np.zeros((2, 2)), None)

    def test_upstream_shape_checked(self):
        rng = np.random.default_rng(15)
        graph = make_graph(rng, 2, 2, 2)
        model = random_model(rng, 2)
        cache = forward(model, graph)
        with pytest.raises(ValueError):
            verbalizer_gradients(model, graph, np.zeros((3, 2)), cache)


class TestAttentionExport:
    def test_csv_round_trips_exact_values(self, tmp_path):
        rng = np.random.default_rng(16)
        graph = make_graph(rng, 3, 4, 2)
        model = random_model(rng, 2, n_layers=2)
        path = tmp_path / "att.csv"
        export_attention_csv(model, graph, str(path), comment="run abc")
        lines = path.read_text().splitlines()
        assert lines[0] == "# run abc"
        rows = list(csv.reader(lines[1:]))
        assert rows[0] == ["layer", "dst_label", "src_label", "alpha"]
        idx = pair_index(graph)
        by_layer = {}
        for layer, dst, src, alpha in rows[1:]:
            by_layer.setdefault(int(layer), []).append((dst, src, float(alpha)))
        assert sorted(by_layer) == [1, 2]
        h = graph.feature_matrix()
        labels = [n.label.text for n in graph.nodes]
        for layer in (1, 2):
            att = attention_scores(model, layer - 1, h, graph)
            want = [
                (labels[d], labels[s], float(a))
                for d, s, a in zip(att.dst, att.src, att.alpha)
            ]
            assert by_layer[layer] == want
            h = propagate_layer(model, layer - 1, h, graph)
        assert len(rows) - 1 == 2 * idx.n_pairs
