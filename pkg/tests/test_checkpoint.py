import struct

import numpy as np
import pytest

from dstrnn.checkpoint import (FORMAT_VERSION, MAGIC, Checkpoint, CheckpointError, VersionError,
                               load_checkpoint, load_model, save_checkpoint)
from dstrnn.models import ModelConfig, TrackerModel, build_triples

KINDS = ["independent", "joint", "encdec"]


def model_for(micro, kind, seed=1):
    triples = build_triples(micro["examples"]) if kind == "joint" else None
    return TrackerModel(ModelConfig(kind, 6, 5, seed=seed), micro["vocab"], micro["slot_vocabs"],
                        micro["db"], triples)


@pytest.mark.parametrize("kind", KINDS)
def test_round_trip_is_byte_identical(micro, kind, tmp_path):
    m = model_for(micro, kind)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, {"epoch": 3, "dev_accuracy": 0.5}, path)
    blob = path.read_bytes()
    ck = load_checkpoint(path)
    assert ck.to_bytes() == blob
    assert ck.meta == {"epoch": 3, "dev_accuracy": 0.5}
    for k, t in m.params.items():
        assert np.array_equal(ck.tensors[k], t.data)


@pytest.mark.parametrize("kind", KINDS)
def test_reloaded_model_predicts_identically(micro, kind, tmp_path):
    m = model_for(micro, kind)
    save_checkpoint(m, None, tmp_path / "m.ckpt")
    r = load_model(tmp_path / "m.ckpt")
    assert r.kind == m.kind and r.vocab == m.vocab and r.triples == m.triples
    assert r.featurizer.db.rows == m.featurizer.db.rows
    rng = np.random.default_rng(0)
    for i in rng.choice(len(micro["examples"]), size=50, replace=True):
        ex = micro["examples"][i]
        a, b = m.encode(ex), r.encode(ex)
        assert np.array_equal(a.h.data, b.h.data)
        assert m.predict_goal(a) == r.predict_goal(b)


def test_wrong_version_is_reported(micro, tmp_path):
    blob = bytearray(Checkpoint.from_model(model_for(micro, "independent")).to_bytes())
    struct.pack_into("<I", blob, len(MAGIC), FORMAT_VERSION + 1)
    with pytest.raises(VersionError, match=str(FORMAT_VERSION + 1)):
        Checkpoint.from_bytes(bytes(blob))


def test_corruption_and_truncation_are_detected(micro):
    blob = Checkpoint.from_model(model_for(micro, "encdec")).to_bytes()
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        Checkpoint.from_bytes(bytes(flipped))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(blob[:12])
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"NOTACKPT" + blob[8:])
