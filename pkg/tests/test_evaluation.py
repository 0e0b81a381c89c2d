import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score

from dyadface import clstm
from dyadface.corpus import N_AFFECT, AffectClass, Standardizer, one_hot
from dyadface.dictionary import generate_sequence
from dyadface.evaluation import (
    EvalReport, adjusted_rand_index, cluster_recovery, compare_modes, comparison_metrics, dictionary_latency, mse,
    smoothness,
)
from dyadface.pdm import neutral_params

pairs = st.integers(1, 8).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (n, 3), elements=st.floats(-1e3, 1e3))))


def test_mse_examples():
    a = np.random.default_rng(0).normal(size=(6, 4))
    assert mse(a, a) == 0.0
    assert mse(a, a + 0.3) == pytest.approx(0.09, abs=1e-15)


def test_mse_matches_a_double_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
    total = 0.0
    for i in range(10):
        for j in range(4):
            total += (a[i, j] - b[i, j]) ** 2
    assert abs(mse(a, b) - total / 40) < 1e-12


@settings(max_examples=100, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_mse_symmetric_and_permutation_equivariant(ab, rnd):
    a, b = ab
    order = list(range(len(a)))
    rnd.shuffle(order)
    assert mse(a, b) == mse(b, a)
    assert mse(a[order], b[order]) == pytest.approx(mse(a, b), rel=1e-12, abs=1e-12)


def test_mse_errors():
    with pytest.raises(ValueError):
        mse(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        mse(np.zeros((0, 2)), np.zeros((0, 2)))


def test_smoothness_examples(pdm):
    still = np.tile(neutral_params(pdm).flatten(), (5, 1))
    assert smoothness(still, pdm) == {"mean_disp": 0.0, "max_disp": 0.0, "pixel_mean": 0.0, "pixel_max": 0.0}
    step = np.zeros((2, 4))
    step[1, 2] = 1.0
    out = smoothness(step)
    assert out["mean_disp"] == out["max_disp"] == 1.0
    with pytest.raises(ValueError):
        smoothness(step[:1])


def test_smoothness_pixels_follow_translation(pdm):
    seq = np.tile(neutral_params(pdm).flatten(), (3, 1))
    seq[1, 4] += 3.0
    seq[2, 4] += 3.0
    seq[2, 5] += 4.0
    out = smoothness(seq, pdm)
    assert out["pixel_max"] == pytest.approx(4.0) and out["pixel_mean"] == pytest.approx(3.5)


def test_smoothness_uses_standardized_units():
    std = Standardizer(np.zeros(2), np.array([2.0, 1.0]))
    assert smoothness(np.array([[0.0, 0.0], [2.0, 0.0]]), standardizer=std)["max_disp"] == 1.0


def test_dictionary_sequences_are_smoother_than_shuffles(small_dictionary):
    rng = np.random.default_rng(2)
    std = small_dictionary.standardizer
    for trial in range(20):
        seq = generate_sequence(small_dictionary, [one_hot(trial % N_AFFECT)] * 200, rng)
        shuffled = seq[rng.permutation(len(seq))]
        assert smoothness(seq, standardizer=std)["max_disp"] < smoothness(shuffled, standardizer=std)["max_disp"]


def test_ari_matches_sklearn():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.integers(5, size=200), rng.integers(7, size=200)
        b[:120] = a[:120]
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_ari_perfect_and_random():
    rng = np.random.default_rng(4)
    labels = rng.integers(8, size=1000)
    assert adjusted_rand_index(labels, (labels + 3) % 8) == 1.0
    assert abs(adjusted_rand_index(labels, rng.integers(8, size=1000))) < 0.05


def test_ari_errors_and_edges():
    assert adjusted_rand_index([0], [5]) == 1.0
    assert adjusted_rand_index([1, 1, 1], [0, 0, 0]) == 1.0
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0])


def test_cluster_recovery_on_default_corpus(default_dictionary, default_corpus):
    out = cluster_recovery(default_dictionary, default_corpus)
    assert out["ari"] > 0.9
    assert out["counts_in_range"] and out["min_subcluster_size"] >= 100
    assert len(out["purity"]) == N_AFFECT and min(out["purity"]) > 0.8
    assert sum(out["subcluster_histogram"]) == N_AFFECT


def test_cluster_recovery_rejects_foreign_frames(small_dictionary, default_corpus):
    with pytest.raises(ValueError, match="not dictionary members"):
        cluster_recovery(small_dictionary, default_corpus)


def _small_lstm(corpus):
    cfg = clstm.CLstmConfig(d=corpus.d, hidden_dim=16, window=10, epochs=1, seed=0)
    model, _ = clstm.train(clstm.CLstmModel.init(cfg), corpus.sequences)
    return model


def test_compare_modes_is_repeatable(small_corpus):
    model = _small_lstm(small_corpus)
    a = compare_modes(model, small_corpus.sequences[:6], n_blocks=3)
    b = compare_modes(model, small_corpus.sequences[:6], n_blocks=3)
    for key in ("mse_overlap", "mse_nonoverlap", "mse_overlap_closed_loop", "mse_nonoverlap_closed_loop",
                "mse_by_horizon", "frames"):
        assert getattr(a, key) == getattr(b, key)
    assert a.frames == 3 * 10 * 6
    assert a.seconds_per_frame_overlap > 0 and a.seconds_per_frame_nonoverlap > 0


def test_block_start_error_equals_overlap_error(small_corpus):
    # the first frame of every block is a one-step prediction from the true window in both modes
    model = _small_lstm(small_corpus)
    seqs = small_corpus.sequences[:4]
    out = compare_modes(model, seqs, n_blocks=2)
    n = model.config.window
    errs = []
    for b in range(2):
        t = n * (b + 1)
        for s in seqs:
            hist = s.slice(t - n, t)
            pred = model.standardizer.transform(clstm.generate(model, hist, s.affect[t:t + 1], 1)[0])
            errs.append(np.mean((pred - model.standardizer.transform(s.shapes[t])) ** 2))
    assert out.mse_by_horizon[0] == pytest.approx(np.mean(errs), rel=1e-9)


def test_compare_modes_needs_enough_frames(small_corpus):
    model = _small_lstm(small_corpus)
    with pytest.raises(ValueError):
        compare_modes(model, small_corpus.sequences[:2], n_blocks=50)


def test_dictionary_latency_is_positive(small_dictionary):
    assert dictionary_latency(small_dictionary, [one_hot(AffectClass.FEAR)] * 10) > 0
    with pytest.raises(ValueError):
        dictionary_latency(small_dictionary, np.zeros((0, N_AFFECT)))


def _report():
    report = EvalReport(config={"seed": 3, "truth": "corpus/seq_00001.txt"})
    report.add("generated.smoothness", {"mean_disp": 0.25, "max_disp": 1.5})
    report.add("clusters", {"ari": 0.97, "purity": [1.0, float("nan")], "subcluster_counts": [3, 4],
                            "counts_in_range": True})
    report.add("modes", {"overlap_better": False, "frames": 40, "mse_by_horizon": [0.1, 1e-20]})
    return report


def test_report_round_trips_through_lines():
    report = _report()
    again = EvalReport.from_lines(report.to_lines())
    assert again.config == report.config
    assert again.to_lines() == report.to_lines()
    assert again.metrics["modes.overlap_better"] is False and again.metrics["modes.frames"] == 40
    assert np.isnan(again.metrics["clusters.purity"][1])


def test_report_round_trips_through_json():
    report = _report()
    report.metrics["clusters.purity"] = [1.0, 0.5]
    again = EvalReport.from_json(report.to_json())
    assert again.metrics == report.metrics and again.config == report.config


def test_report_rejects_foreign_input():
    with pytest.raises(ValueError):
        EvalReport.from_lines(["REPORT v2"])
    with pytest.raises(ValueError):
        EvalReport.from_lines(["EVAL v1", "no separator"])
    with pytest.raises(ValueError):
        EvalReport.from_json('{"format": "other"}')


def test_report_finiteness_check():
    report = _report()
    report.check_finite()
    report.metrics["modes.mse_overlap"] = float("inf")
    with pytest.raises(FloatingPointError, match="modes.mse_overlap"):
        report.check_finite()


def test_comparison_metrics_cover_every_field(small_corpus):
    out = comparison_metrics(compare_modes(_small_lstm(small_corpus), small_corpus.sequences[:3], n_blocks=1))
    assert out["overlap_better"] == (out["mse_overlap"] < out["mse_nonoverlap"])
    assert len(out["mse_by_horizon"]) == 10
