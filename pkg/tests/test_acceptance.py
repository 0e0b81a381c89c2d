"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict (printed in the terminal summary under
"acceptance criteria") before asserting, so a failing run still reports
every criterion.
"""
import time

import numpy as np
from conftest import (
    fd_relative_error, gan_fd_instance, lstm_fd_instance, random_params, toy_errors,
)

from dyadface import cgan, cli, clstm
from dyadface.cgan import MlpNet
from dyadface.corpus import N_AFFECT, one_hot
from dyadface.dictionary import build_dictionary, generate_sequence
from dyadface.evaluation import EvalReport, cluster_recovery, compare_modes, smoothness
from dyadface.pdm import fit, project
from dyadface.sketch import Topology, mean_shape_frame, render
from test_sketch import GOLDEN_MEAN_FRAME, neighbour_counts


def test_criterion_1_pdm_round_trip(pdm, record_criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    errors = np.empty(1000)
    for i in range(1000):
        p = random_params(pdm, rng)
        errors[i] = np.linalg.norm(fit(pdm, project(pdm, p)).flatten() - p)
    seconds = time.perf_counter() - start
    rate = float(np.mean(errors < 1e-6))
    ok = rate >= 0.95 and seconds < 30
    record_criterion(1, "PDM round trip", ok,
                     f"{rate:.1%} of 1000 draws under 1e-6 (median {np.median(errors):.1e}), {seconds:.1f}s")
    assert ok


def test_criterion_2_gradient_oracles(record_criterion):
    start = time.perf_counter()
    worst = {"bptt": 0.0, "d_loss": 0.0, "g_loss": 0.0}
    for seed in range(20):
        model, x, y = lstm_fd_instance(seed)
        _, grads = clstm.bptt_gradients(model, x, y)
        worst["bptt"] = max(worst["bptt"], fd_relative_error(
            lambda: clstm.bptt_gradients(model, x, y)[0], model.params, grads))
        gan, gx, gy, gz = gan_fd_instance(seed)
        _, dg = cgan.d_loss(gan.D, gan.G, gx, gy, gz, with_grad=True)
        worst["d_loss"] = max(worst["d_loss"], fd_relative_error(
            lambda: cgan.d_loss(gan.D, gan.G, gx, gy, gz), gan.D.params, dg))
        _, gg = cgan.g_loss(gan.D, gan.G, gx, gz, with_grad=True)
        worst["g_loss"] = max(worst["g_loss"], fd_relative_error(
            lambda: cgan.g_loss(gan.D, gan.G, gx, gz), gan.G.params, gg))
    seconds = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and seconds < 60
    detail = ", ".join(f"{k} worst {v:.1e}" for k, v in worst.items())
    record_criterion(2, "gradient oracles", ok, f"20 instances each; {detail}; {seconds:.1f}s")
    assert ok


def test_criterion_3_dictionary_recovery(default_corpus, record_criterion):
    start = time.perf_counter()
    dic = build_dictionary(default_corpus, min_size=100, seed=0)
    seconds = time.perf_counter() - start
    rec = cluster_recovery(dic, default_corpus)
    counts = rec["subcluster_counts"]
    ok = (rec["ari"] > 0.9 and rec["min_subcluster_size"] >= 100 and all(1 <= k <= 9 for k in counts)
          and all(3 <= k <= 9 for k in counts) and seconds < 120)
    record_criterion(3, "dictionary recovery", ok,
                     f"ARI {rec['ari']:.3f}, sub-clusters {counts}, smallest {rec['min_subcluster_size']}, "
                     f"{len(default_corpus.sequences)} sequences, {seconds:.1f}s")
    assert ok


def test_criterion_4_overlap_beats_nonoverlap(trained_lstms, heldout_corpus, record_criterion):
    results, train_seconds = [], 0.0
    for seed, (model, _, seconds) in trained_lstms.items():
        train_seconds += seconds
        results.append(compare_modes(model, heldout_corpus.sequences))
    wins = sum(r.overlap_better for r in results)
    ok = wins >= 2 and train_seconds < 300
    detail = "; ".join(f"seed {s}: {r.mse_overlap:.4f} < {r.mse_nonoverlap:.4f}" if r.overlap_better
                       else f"seed {s}: {r.mse_overlap:.4f} >= {r.mse_nonoverlap:.4f}" for s, r in enumerate(results))
    record_criterion(4, "Overlap MSE below NonOverlap", ok,
                     f"{wins}/3 seeds ({detail}); training {train_seconds:.0f}s")
    assert ok


def test_criterion_5_temporal_smoothness(default_dictionary, record_criterion):
    std = default_dictionary.standardizer
    wins = 0
    for trial in range(100):
        rng = np.random.default_rng([trial, 5])
        seq = generate_sequence(default_dictionary, [one_hot(trial % N_AFFECT)] * 400, rng)
        shuffled = seq[rng.permutation(len(seq))]
        wins += smoothness(seq, standardizer=std)["max_disp"] < smoothness(shuffled, standardizer=std)["max_disp"]
    ok = wins >= 95
    record_criterion(5, "temporal smoothness", ok, f"{wins}/100 sequences smoother than their shuffles")
    assert ok


def test_criterion_6_cgan_equilibrium(toy_gans, record_criterion):
    rng = np.random.default_rng(6)
    G = MlpNet([N_AFFECT + 4, 8, 4])
    D = MlpNet([N_AFFECT + 4, 8, 1], "sigmoid")
    for v in D.params.values():
        v[...] = 0.0
    x = np.stack([one_hot(c % 2) for c in range(32)])
    loss = cgan.d_loss(D, G, x, rng.normal(size=(32, 4)), rng.normal(size=(32, 4)))
    analytic = abs(loss - 2 * np.log(2))
    errors = {seed: max(m for m, _ in toy_errors(model)) for seed, (model, _, _) in toy_gans.items()}
    seconds = sum(s for _, _, s in toy_gans.values())
    passing = sum(e < 0.1 for e in errors.values())
    ok = analytic < 1e-9 and passing >= 2 and seconds < 180
    detail = ", ".join(f"seed {s} {e:.3f}" for s, e in errors.items())
    record_criterion(6, "CGAN equilibrium", ok,
                     f"|d_loss - 2 ln 2| = {analytic:.1e}; toy mean error {detail}; {passing}/3 pass; {seconds:.0f}s")
    assert ok


def test_criterion_7_renderer(pdm, record_criterion):
    digest = mean_shape_frame(pdm).digest()
    rng = np.random.default_rng(7)
    thin = 0
    for _ in range(100):
        pts = np.zeros((68, 2))
        pts[0], pts[1] = rng.integers(0, 128, 2), rng.integers(0, 128, 2)
        frame = render(pts, Topology(((0, 1),)), 128, 128)
        on = frame.pixels == 1
        thin += bool(np.all(neighbour_counts(frame.pixels)[on] <= 2)) and on.sum() == max(abs(pts[1] - pts[0])) + 1
    ok = digest == GOLDEN_MEAN_FRAME and thin == 100
    record_criterion(7, "renderer", ok, f"golden hash {'matches' if digest == GOLDEN_MEAN_FRAME else 'differs'}; "
                                        f"{thin}/100 segments one pixel wide")
    assert ok


REQUIRED_KEYS = [
    "generated.mse", "generated.frames", "generated.history_frames",
    *[f"{side}.smoothness.{k}" for side in ("generated", "truth")
      for k in ("mean_disp", "max_disp", "pixel_mean", "pixel_max")],
    "clusters.ari", "clusters.purity", "clusters.subcluster_counts", "clusters.subcluster_histogram",
    "clusters.counts_in_range", "clusters.min_subcluster_size",
    "modes.mse_overlap", "modes.mse_nonoverlap", "modes.overlap_better", "modes.mse_by_horizon",
    "modes.seconds_per_frame_overlap", "modes.seconds_per_frame_nonoverlap",
    "methods.dict.history_frames", "methods.dict.seconds_per_frame",
    "methods.lstm.history_frames", "methods.lstm.seconds_per_frame",
]


def test_criterion_8_end_to_end_pipeline(tmp_path, record_criterion):
    corpus = str(tmp_path / "corpus")
    commands = [
        ["synth", "--out", corpus, "--seq-len", "400"],
        ["build-pdm", "--corpus", corpus, "--out", str(tmp_path / "pdm.txt")],
        ["build-dict", "--corpus", corpus, "--pdm", str(tmp_path / "pdm.txt"), "--out", str(tmp_path / "dict.txt")],
        ["train", "lstm", "--corpus", corpus, "--epochs", "2", "--out", str(tmp_path / "lstm.txt")],
        ["generate", "--method", "dict", "--corpus", corpus, "--dictionary", str(tmp_path / "dict.txt"),
         "--steps", "400", "--frames", str(tmp_path / "frames"), "--out", str(tmp_path / "generated.txt")],
        ["eval", "--generated", str(tmp_path / "generated.txt"), "--truth", corpus,
         "--dictionary", str(tmp_path / "dict.txt"), "--model", str(tmp_path / "lstm.txt"),
         "--out", str(tmp_path / "report.txt")],
    ]
    start = time.perf_counter()
    codes = [cli.main(argv) for argv in commands]
    seconds = time.perf_counter() - start
    missing = ["report"]
    figures = 0
    if (tmp_path / "report.txt").exists():
        report = EvalReport.from_lines((tmp_path / "report.txt").read_text().splitlines())
        missing = [k for k in REQUIRED_KEYS if k not in report.metrics]
        figures = len(list(tmp_path.glob("report_*.png")))
    ok = codes == [0] * 6 and seconds < 600 and not missing and figures == 3
    record_criterion(8, "end-to-end pipeline", ok,
                     f"exit codes {codes}, {seconds:.0f}s, {len(REQUIRED_KEYS) - len(missing)}/{len(REQUIRED_KEYS)} "
                     f"metrics, {figures} figures")
    assert ok
