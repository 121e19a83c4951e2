import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from diformer.encoder import EncoderConfig, SpeakerEncoder, freeze
from diformer.errors import InvalidSpec
from diformer.features import Waveform, compute_logmel
from diformer.inference import masks_to_segments
from diformer.supervision import (
    FRAME_SECONDS,
    SceneSpec,
    SpeechSegment,
    build_gt_embeddings,
    build_masks,
    crop_segments,
    generate_scene,
    overlap_stats,
    read_manifest,
    render_scene,
    write_dataset,
)


@pytest.fixture(scope="module")
def small_encoder():
    torch.manual_seed(0)
    return freeze(SpeakerEncoder(EncoderConfig(base_channels=4, embed_dim=16)))


class TestSegments:
    def test_rejects_bad_segments(self):
        with pytest.raises(ValueError):
            SpeechSegment("a", 0.0, 0.0)
        with pytest.raises(ValueError):
            SpeechSegment("a", -0.1, 1.0)

    def test_crop(self):
        segs = [SpeechSegment("a", 1.0, 4.0), SpeechSegment("b", 6.0, 1.0)]
        out = crop_segments(segs, 2.0, 6.5)
        assert [(s.speaker_id, s.onset, s.duration) for s in out] == [("a", 0.0, 3.0), ("b", 4.0, 0.5)]


class TestMasks:
    def test_one_second_segment(self):
        masks, order = build_masks([SpeechSegment("a", 0.0, 1.0)], 50)
        assert order == ["a"]
        assert masks[0].tolist() == [1.0] * 25 + [0.0] * 25

    def test_full_overlap_gives_identical_rows(self):
        masks, _ = build_masks([SpeechSegment("a", 0.0, 2.0), SpeechSegment("b", 0.0, 2.0)], 50)
        assert np.array_equal(masks[0], masks[1]) and masks.sum() == 100

    def test_first_appearance_order(self):
        _, order = build_masks([SpeechSegment("z", 0.0, 1.0), SpeechSegment("a", 0.5, 1.0),
                                SpeechSegment("z", 2.0, 1.0)], 100)
        assert order == ["z", "a"]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(0, 3.5), st.floats(0.01, 1.5)), max_size=8))
    def test_against_interval_stabbing_oracle(self, raw):
        segs = [SpeechSegment(s, round(a, 4), round(d, 4)) for s, a, d in raw if round(d, 4) > 0]
        t_m = 100
        masks, order = build_masks(segs, t_m)
        for row, spk in zip(masks, order):
            for f in range(t_m):
                lo, hi = f * FRAME_SECONDS, (f + 1) * FRAME_SECONDS
                active = any(min(hi, s.offset) - max(lo, s.onset) > 1e-9 for s in segs if s.speaker_id == spk)
                assert row[f] == float(active)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=80))
    def test_segment_round_trip(self, bits):
        mask = np.array(bits, dtype=np.uint8)
        segs = masks_to_segments(mask, speaker="a")
        back, _ = build_masks(segs, len(mask))
        if mask.any():
            assert np.array_equal(back[0], mask)
        else:
            assert back.shape == (0, len(mask))


class TestScenes:
    def test_deterministic(self):
        a, sa = generate_scene(SceneSpec(seed=7))
        b, sb = generate_scene(SceneSpec(seed=7))
        assert np.array_equal(a.samples, b.samples) and sa == sb

    def test_no_overlap_when_ratio_zero(self):
        _, segs = generate_scene(SceneSpec(num_speakers=3, total_duration=30.0, overlap_ratio=0.0, seed=1))
        for x in segs:
            for y in segs:
                if x.speaker_id != y.speaker_id:
                    assert min(x.offset, y.offset) <= max(x.onset, y.onset)

    def test_overlap_ratio_is_hit(self):
        _, segs = generate_scene(SceneSpec(num_speakers=3, total_duration=60.0, overlap_ratio=0.2, seed=0))
        speech, overlapped = overlap_stats(segs)
        assert 0.15 <= overlapped / speech <= 0.25

    def test_single_speaker_overlap_is_invalid(self):
        with pytest.raises(InvalidSpec):
            SceneSpec(num_speakers=1, overlap_ratio=0.1)

    def test_every_speaker_appears(self):
        _, segs = generate_scene(SceneSpec(num_speakers=4, total_duration=12.0, seed=5))
        assert len({s.speaker_id for s in segs}) == 4

    def test_label_fidelity(self):
        scene = render_scene(SceneSpec(num_speakers=2, total_duration=8.0, overlap_ratio=0.1, seed=11))
        t_m = 200
        masks, order = build_masks(scene.segments, t_m)
        for row, spk in zip(masks, order):
            frames = np.abs(scene.tracks[spk][: t_m * 640]).reshape(t_m, 640).max(1) > 0
            diff = np.flatnonzero(frames != row.astype(bool))
            edges = np.flatnonzero(np.diff(np.concatenate([[0], row, [0]])))
            for f in diff:  # disagreements only on boundary frames
                assert np.min(np.abs(edges - f)) <= 1


class TestGroundTruthEmbeddings:
    def test_single_speaker_uses_full_audio(self, small_encoder):
        w, segs = generate_scene(SceneSpec(num_speakers=1, total_duration=3.0, seed=2))
        emb = build_gt_embeddings(w, segs, small_encoder)
        with torch.no_grad():
            ref = small_encoder.encode_utterance(compute_logmel(w))
        assert torch.allclose(emb[0], ref, atol=1e-6)

    def test_other_speaker_is_removed(self, small_encoder):
        w, segs = generate_scene(SceneSpec(num_speakers=2, total_duration=4.0, seed=3))
        emb = build_gt_embeddings(w, segs, small_encoder)
        _, order = build_masks(segs, 100)
        for k, spk in enumerate(order):
            keep = np.ones(len(w), dtype=bool)
            for s in segs:
                if s.speaker_id != spk:
                    keep[int(round(s.onset * 16000)):int(round(s.offset * 16000))] = False
            spliced = w.samples[keep]
            with torch.no_grad():
                ref = small_encoder.encode_utterance(compute_logmel(spliced))
            assert torch.allclose(emb[k], ref, atol=1e-5)
            assert abs(float(emb[k].norm()) - 1) < 1e-6

    def test_fully_overlapped_speaker_falls_back(self, small_encoder, caplog):
        w = Waveform(np.random.default_rng(0).uniform(-1, 1, 32000).astype(np.float32))
        segs = [SpeechSegment("a", 0.0, 2.0), SpeechSegment("b", 0.5, 1.0)]
        with caplog.at_level(logging.WARNING):
            emb = build_gt_embeddings(w, segs, small_encoder)
        assert "no clean" in caplog.text
        with torch.no_grad():
            ref = small_encoder.encode_utterance(compute_logmel(w.samples[8000:24000]))
        assert torch.allclose(emb[1], ref, atol=1e-6)


def test_dataset_round_trip(tmp_path):
    specs = [SceneSpec(seed=i) for i in range(3)]
    write_dataset(tmp_path, specs)
    entries = read_manifest(tmp_path)
    assert len(entries) == 3
    for wav, rttm, dur in entries:
        assert wav.exists() and rttm.exists() and dur == pytest.approx(4.0)
