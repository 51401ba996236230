import numpy as np
import pytest

from services.errors import ConfigError, EmptySequence, MissingDump, RateMismatch
from services.inference import (
    PredictionStream, accumulate_sliding_window, accumulated_scores, full_window, label_track, load_score_dump,
    predict_track, predict_video, read_label_file, save_score_dump, snippetwise_labels, upsample_prediction,
    write_label_file,
)
from services.metrics import edit_score, segments_from_labels
from services.model import build_3d_dense_net
from services.vocabulary import suturing_vocabulary


def _uniform(n, g=4, length=16):
    return np.full((n, g, length), 1.0 / g)


def _voting_scores(votes, g):
    """One-hot scores where anchor s casts votes[s][frame] for every frame it covers."""
    n = len(votes)
    scores = np.zeros((n, g, 16))
    for s in range(n):
        for c in range(16):
            frame = max(s - (15 - c), 0)
            scores[s, votes[s][frame], c] = 1.0
    return scores


# =====================
# Upsampling
# =====================
def test_upsample_interleaves_and_averages():
    rng = np.random.default_rng(0)
    gamma = rng.dirichlet(np.ones(5), size=16).T
    up = upsample_prediction(gamma)
    assert up.shape == (5, 32)
    np.testing.assert_allclose(up[:, 0], gamma[:, 0], atol=1e-12)
    for m in range(16):
        np.testing.assert_allclose(up[:, 2 * m + 1], gamma[:, m], atol=1e-12)
    for m in range(1, 16):
        np.testing.assert_allclose(up[:, 2 * m], 0.5 * (gamma[:, m - 1] + gamma[:, m]), atol=1e-12)
    np.testing.assert_allclose(up.sum(axis=0), 1.0, atol=1e-12)


def test_upsample_keeps_batch_axes():
    assert upsample_prediction(_uniform(3)).shape == (3, 4, 32)


# =====================
# Snippet-wise labeling
# =====================
def test_snippetwise_takes_newest_column():
    scores = _uniform(5)
    scores[:, 3, -1] = 0.9
    scores[:, 1, :-1] = 0.9
    np.testing.assert_array_equal(snippetwise_labels(scores), [3] * 5)


def test_snippetwise_ties_go_to_lowest_class():
    scores = np.zeros((1, 4, 16))
    scores[0, 2, -1] = scores[0, 3, -1] = 0.5
    assert snippetwise_labels(scores).tolist() == [2]


def test_snippetwise_single_anchor_and_empty():
    assert len(snippetwise_labels(_uniform(1))) == 1
    with pytest.raises(EmptySequence):
        snippetwise_labels(np.zeros((0, 4, 16)))


# =====================
# Sliding-window accumulation
# =====================
def test_zero_look_ahead_is_snippetwise():
    rng = np.random.default_rng(3)
    scores = rng.dirichlet(np.ones(6), size=(40, 16)).transpose(0, 2, 1)
    np.testing.assert_array_equal(accumulate_sliding_window(scores, 0), snippetwise_labels(scores))


def test_unanimous_scores():
    scores = np.zeros((30, 10, 16))
    scores[:, 7, :] = 1.0
    for k in (0, 5, 15):
        np.testing.assert_array_equal(accumulate_sliding_window(scores, k), [7] * 30)


def test_window_is_truncated_at_the_end():
    scores = np.full((2, 2, 16), 0.5)
    scores[0, :, 15] = [0.6, 0.4]
    scores[1, :, 14] = [0.0, 1.0]
    scores[1, :, 15] = [0.7, 0.3]
    np.testing.assert_allclose(accumulated_scores(scores, 15), [[0.6, 1.4], [0.7, 0.3]])
    np.testing.assert_array_equal(accumulate_sliding_window(scores, 15), [1, 0])


def test_labels_are_scale_invariant():
    rng = np.random.default_rng(5)
    scores = rng.random((25, 4, 16))
    np.testing.assert_array_equal(accumulate_sliding_window(scores, 9), accumulate_sliding_window(3 * scores, 9))


def test_accumulation_removes_isolated_errors():
    truth = np.repeat(np.arange(4), 25)
    votes = [truth if s % 5 != 2 else (truth + 1) % 4 for s in range(100)]
    scores = _voting_scores(votes, 4)

    noisy = snippetwise_labels(scores)
    smoothed = accumulate_sliding_window(scores, 15)
    assert len(segments_from_labels(noisy)) == 44
    np.testing.assert_array_equal(smoothed, truth)
    gt = segments_from_labels(truth)
    assert edit_score(segments_from_labels(smoothed), gt) > edit_score(segments_from_labels(noisy), gt)


def test_look_ahead_range():
    with pytest.raises(ConfigError):
        accumulated_scores(_uniform(4), 16)
    with pytest.raises(ConfigError):
        accumulated_scores(_uniform(4), -1)


def test_ten_hertz_window():
    stream = PredictionStream("v", 10, np.arange(6), _uniform(6))
    assert full_window(stream) == 31
    assert full_window(PredictionStream("v", 5, np.arange(6), _uniform(6))) == 15
    track = label_track(stream, 31)
    assert track.accumulated.shape == (6, 4)
    assert label_track(stream).final_labels.tolist() == [0] * 6


# =====================
# Model evaluation
# =====================
def test_prediction_counts(tiny_collection):
    model = build_3d_dense_net(3, width=4)
    record = tiny_collection.record("Synth_B001")
    labels5 = tiny_collection.labels("Synth_B001", 5)
    labels10 = tiny_collection.labels("Synth_B001", 10)

    stream5 = predict_video(model, record, labels5, 5, batch_size=8, load_size=32, input_size=32)
    stream10 = predict_video(model, record, labels10, 10, batch_size=8, load_size=32, input_size=32)
    assert stream5.scores.shape == (len(labels5.region), 3, 16)
    assert len(stream10) == len(labels10.region)
    assert abs(len(stream10) - 2 * len(stream5)) <= 1
    np.testing.assert_allclose(stream5.scores.sum(axis=1), 1.0, atol=1e-5)

    track = predict_track(model, record, labels5, 5, look_ahead=15, batch_size=8, load_size=32, input_size=32)
    assert len(track.final_labels) == len(stream5)


def test_prediction_rate_must_match_labels(tiny_collection):
    model = build_3d_dense_net(3, width=4)
    record = tiny_collection.record("Synth_B001")
    with pytest.raises(RateMismatch):
        predict_video(model, record, tiny_collection.labels("Synth_B001", 5), 10, load_size=32, input_size=32)


# =====================
# Dumps and label files
# =====================
def test_score_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    stream = PredictionStream("Suturing_B001", 10, np.arange(3, 9), rng.random((6, 4, 16)).astype(np.float32))
    gt = np.array([0, 0, 1, 1, 2, 3])
    loaded, loaded_gt = load_score_dump(save_score_dump(tmp_path / "dumps" / "b.npz", stream, gt))
    assert loaded.video_id == "Suturing_B001"
    assert loaded.eval_fps == 10
    np.testing.assert_array_equal(loaded.anchors, stream.anchors)
    np.testing.assert_array_equal(loaded.scores, stream.scores)
    np.testing.assert_array_equal(loaded_gt, gt)


def test_missing_dump(tmp_path):
    with pytest.raises(MissingDump):
        load_score_dump(tmp_path / "absent.npz")


def test_label_file_round_trip(tmp_path):
    vocab = suturing_vocabulary()
    labels = np.array([0, 0, 5, 6, 6, 1])
    write_label_file(tmp_path / "v.txt", labels, vocab)
    assert (tmp_path / "v.txt").read_text().splitlines()[3] == "G8"
    np.testing.assert_array_equal(read_label_file(tmp_path / "v.txt", vocab), labels)


def test_empty_label_file(tmp_path):
    (tmp_path / "v.txt").write_text("\n\n")
    with pytest.raises(EmptySequence):
        read_label_file(tmp_path / "v.txt", suturing_vocabulary())
