"""Shared, disk-cached heavy fixtures: a pretrained encoder and two trained models.

Artifacts live in the pytest cache directory under a key derived from the
package sources and the fixture parameters, so editing any module retrains.
"""
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import diformer
from diformer import archive
from diformer.config import RunConfig
from diformer.encoder import SpeakerEncoder, pretrain_encoder
from diformer.features import Waveform
from diformer.model import DiFormer
from diformer.supervision import SceneSpec, clips_to_logmel, generate_scene, speaker_clips
from diformer.train import load_checkpoint, prepare_examples, save_checkpoint, train

PRETRAIN = dict(speakers=64, clips=16, clip_seconds=1.0, epochs=8, lr=2e-3, seed=0)
HELD_OUT_SPEAKERS = [f"spk{i:04d}" for i in range(500, 532)]
OVERFIT = dict(scenes=20, seed_base=100, overlap=0.1, steps=1500, lr=1e-3, batch_size=8, seed=0)
SILENCE = dict(scenes=8, seed_base=300, max_speakers=2, silent=4, steps=600, lr=1e-3, batch_size=8, seed=0)


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(diformer.__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _cache_path(pytestconfig, name: str, params: dict) -> Path:
    key = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:12]
    root = Path(pytestconfig.cache.mkdir("diformer-fixtures"))
    return root / f"{name}-{_source_digest()}-{key}"


def pretrain_speakers():
    return [f"spk{i:04d}" for i in range(PRETRAIN["speakers"])]


@pytest.fixture(scope="session")
def pretrained(pytestconfig):
    """Encoder pretrained on 64 synthetic speakers, plus its held-out clip accuracy."""
    base = _cache_path(pytestconfig, "encoder", PRETRAIN)
    path, meta_path = base.with_suffix(".bin"), base.with_suffix(".json")
    if not path.exists():
        torch.manual_seed(PRETRAIN["seed"])
        speakers = pretrain_speakers()
        clips, labels = speaker_clips(speakers, PRETRAIN["clips"], PRETRAIN["clip_seconds"], PRETRAIN["seed"])
        val_clips, val_labels = speaker_clips(speakers, 4, PRETRAIN["clip_seconds"], PRETRAIN["seed"] + 1)
        start = time.perf_counter()
        result = pretrain_encoder(clips_to_logmel(clips), labels, epochs=PRETRAIN["epochs"],
                                  lr=PRETRAIN["lr"], seed=PRETRAIN["seed"],
                                  val_specs=clips_to_logmel(val_clips), val_labels=val_labels)
        meta = {"val_accuracy": result.val_accuracy, "seconds": time.perf_counter() - start}
        result.encoder.save(path)
        meta_path.write_text(json.dumps(meta))
    return SpeakerEncoder.load(path), json.loads(meta_path.read_text())


@pytest.fixture(scope="session")
def encoder(pretrained):
    return pretrained[0]


def overfit_scenes():
    out = []
    for i in range(OVERFIT["scenes"]):
        seed = OVERFIT["seed_base"] + i
        w, segs = generate_scene(SceneSpec(num_speakers=2, total_duration=4.0,
                                           overlap_ratio=OVERFIT["overlap"], seed=seed))
        out.append((f"scene{seed}", w, segs))
    return out


def _train_cached(pytestconfig, name, params, encoder, recordings, config):
    base = _cache_path(pytestconfig, name, {**params, "encoder": archive.checksum(encoder.state_dict())})
    path, meta_path = base.with_suffix(".bin"), base.with_suffix(".json")
    if not path.exists():
        before = archive.checksum(encoder.state_dict())
        start = time.perf_counter()
        examples, skipped = prepare_examples(recordings, encoder, config, use_cache=False)
        torch.manual_seed(config.seed)
        model = DiFormer(config, encoder)
        result = train(model, examples, config)
        seconds = time.perf_counter() - start
        meta = {"seconds": seconds, "history": result.history, "skipped": skipped,
                "encoder_before": before, "encoder_after": archive.checksum(model.encoder.state_dict())}
        save_checkpoint(path, model, step=result.step)
        meta_path.write_text(json.dumps(meta))
    model, _, _ = load_checkpoint(path)
    model.eval()
    return model, json.loads(meta_path.read_text()), path


@pytest.fixture(scope="session")
def overfit(pytestconfig, encoder):
    """Desk-profile model trained on 20 fixed two-speaker 4 s scenes."""
    config = RunConfig.desk(steps=OVERFIT["steps"], lr=OVERFIT["lr"], batch_size=OVERFIT["batch_size"],
                            seed=OVERFIT["seed"], log_every=100)
    scenes = overfit_scenes()
    model, meta, path = _train_cached(pytestconfig, "overfit", OVERFIT, encoder, scenes, config)
    return {"model": model, "meta": meta, "scenes": scenes, "config": config, "checkpoint": path}


@pytest.fixture(scope="session")
def silence_aware(pytestconfig, encoder):
    """Small model whose training set includes recordings with no speech at all."""
    config = RunConfig.desk(steps=SILENCE["steps"], lr=SILENCE["lr"], batch_size=SILENCE["batch_size"],
                            seed=SILENCE["seed"], log_every=100)
    recordings = []
    for i in range(SILENCE["scenes"]):
        seed = SILENCE["seed_base"] + i
        w, segs = generate_scene(SceneSpec(num_speakers=1 + i % SILENCE["max_speakers"], total_duration=4.0, seed=seed))
        recordings.append((f"scene{seed}", w, segs))
    for i in range(SILENCE["silent"]):
        recordings.append((f"silent{i}", Waveform(np.zeros(64000, dtype=np.float32)), []))
    model, meta, path = _train_cached(pytestconfig, "silence", SILENCE, encoder, recordings, config)
    return {"model": model, "meta": meta, "config": config, "checkpoint": path}


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
