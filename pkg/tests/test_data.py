import struct

import numpy as np
import pytest

from multistream.data import (FrameBatch, TaskSpec, event_pattern, generate_synthetic,
                              read_features, read_header, stack_batches, write_features)
from multistream.errors import ConfigError, CorruptionError, FormatError


def test_noiseless_single_class_repeats_its_pattern():
    spec = TaskSpec(num_classes=2, event_scales=[5], noise=0.0, background_fraction=0.0,
                    amplitude_jitter=0.0, length_range=(20, 20), num_sequences=1)
    (seq,) = generate_synthetic(spec)
    assert np.all(seq.labels == 1)
    proj = seq.features @ seq.features[0] / np.linalg.norm(seq.features[0])
    np.testing.assert_allclose(proj, np.tile(event_pattern(5), 4), rtol=1e-6)


def test_short_patterns_alternate_and_long_patterns_are_flat():
    np.testing.assert_array_equal(event_pattern(3), [1, -1, 1])
    np.testing.assert_array_equal(event_pattern(9), np.ones(9))


def test_generation_is_deterministic():
    spec = TaskSpec(num_sequences=5, seed=9)
    for a, b in zip(generate_synthetic(spec), generate_synthetic(spec)):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_train_and_heldout_share_the_task():
    a = TaskSpec(noise=0.0, amplitude_jitter=0.0, num_sequences=1, seed=1)
    b = TaskSpec(noise=0.0, amplitude_jitter=0.0, num_sequences=1, seed=2)
    fa, fb = generate_synthetic(a)[0].features, generate_synthetic(b)[0].features
    ra = fa[np.abs(fa).sum(axis=1) > 0][0]
    rb = fb[np.abs(fb).sum(axis=1) > 0][0]
    cos = ra @ rb / np.linalg.norm(ra) / np.linalg.norm(rb)
    assert abs(abs(cos) - 1) < 1e-6


def test_labels_mark_event_spans():
    spec = TaskSpec(noise=0.0, amplitude_jitter=0.0, num_sequences=4, seed=5)
    for seq in generate_synthetic(spec):
        active = np.abs(seq.features).sum(axis=1) > 0
        np.testing.assert_array_equal(active, seq.labels > 0)


def test_class_priors_match_spec():
    spec = TaskSpec(num_sequences=1100, length_range=(80, 120), seed=2)
    labels = np.concatenate([b.labels for b in generate_synthetic(spec)])
    assert labels.size >= 100_000
    shares = np.bincount(labels, minlength=4) / labels.size
    assert np.abs(shares - spec.class_priors()).max() <= 0.02


@pytest.mark.parametrize("kwargs", [{"num_classes": 1}, {"event_scales": [0]}, {"event_scales": []},
                                    {"length_range": (5, 2)}, {"background_fraction": 1.0}])
def test_task_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        TaskSpec(**kwargs)


def test_frame_batch_label_length_check():
    with pytest.raises(ConfigError):
        FrameBatch(np.zeros((3, 2)), np.zeros(4))


# -- container ----------------------------------------------------------------

def test_round_trip_is_exact(tmp_path):
    data = generate_synthetic(TaskSpec(num_sequences=6, length_range=(5, 40), seed=4))
    path = tmp_path / "f.bin"
    write_features(path, data)
    back = read_features(path)
    assert len(back) == len(data)
    for a, b in zip(data, back):
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
    # re-writing what was read reproduces the file byte for byte
    write_features(tmp_path / "g.bin", back)
    assert (tmp_path / "g.bin").read_bytes() == path.read_bytes()


def test_unlabeled_round_trip(tmp_path, rng):
    data = [FrameBatch(rng.normal(size=(4, 3))), FrameBatch(rng.normal(size=(2, 3)))]
    write_features(tmp_path / "u.bin", data)
    assert read_header(tmp_path / "u.bin") == (3, False)
    back = read_features(tmp_path / "u.bin")
    assert all(b.labels is None for b in back)


def test_header_layout(tmp_path):
    write_features(tmp_path / "h.bin", [FrameBatch(np.ones((1, 2), np.float32), [3])])
    blob = (tmp_path / "h.bin").read_bytes()
    assert blob[:16] == b"MSFC" + struct.pack("<IIB3x", 1, 2, 1)
    assert blob[16:] == struct.pack("<Iffi", 1, 1.0, 1.0, 3)


def test_empty_file_is_format_error(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    with pytest.raises(FormatError):
        read_features(tmp_path / "e.bin")


def test_bad_magic_and_version(tmp_path):
    (tmp_path / "m.bin").write_bytes(b"NOPE" + struct.pack("<IIB3x", 1, 2, 0))
    with pytest.raises(FormatError, match="magic"):
        read_features(tmp_path / "m.bin")
    (tmp_path / "v.bin").write_bytes(b"MSFC" + struct.pack("<IIB3x", 9, 2, 0))
    with pytest.raises(FormatError, match="version"):
        read_features(tmp_path / "v.bin")


def test_truncated_record_reports_offset(tmp_path, rng):
    data = [FrameBatch(rng.normal(size=(3, 2)), [0, 1, 2]), FrameBatch(rng.normal(size=(4, 2)), [0] * 4)]
    path = tmp_path / "t.bin"
    write_features(path, data)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    second = 16 + 4 + 3 * 2 * 4 + 3 * 4
    with pytest.raises(CorruptionError) as info:
        read_features(path)
    assert info.value.offset == second


def test_zero_length_utterance_skipped_with_warning(tmp_path, rng):
    path = tmp_path / "z.bin"
    write_features(path, [FrameBatch(rng.normal(size=(2, 2)), [1, 1])])
    with open(path, "ab") as fh:
        fh.write(struct.pack("<I", 0))
        fh.write(struct.pack("<I", 1) + struct.pack("<ff", 1, 2) + struct.pack("<i", 0))
    with pytest.warns(UserWarning, match="empty utterance"):
        back = read_features(path)
    assert [b.num_frames for b in back] == [2, 1]


def test_stack_batches_groups_by_length(rng):
    data = [FrameBatch(rng.normal(size=(t, 2)), np.zeros(t)) for t in (3, 5, 3, 3)]
    shapes = [f.shape for f, _ in stack_batches(data, 2)]
    assert shapes == [(2, 3, 2), (1, 3, 2), (1, 5, 2)]
    shuffled = list(stack_batches(data, 2, np.random.default_rng(0)))
    assert sorted(f.shape for f, _ in shuffled) == sorted(shapes)
