import json
import struct

import numpy as np
import pytest

from mncalab.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    BlobLengthError,
    InventoryError,
    ManifestError,
    VersionError,
    build_manifest,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from mncalab.model import AutomatonModel, StepOptions, step
from mncalab.rng import RngStream
from mncalab.tensor import Tensor


def randomized(variant="mnca_noise", channels=5, hidden=7, n_rules=3, seed=11):
    n_rules = 1 if variant in ("nca", "gca") else n_rules
    model = AutomatonModel.create(variant, channels, hidden, n_rules=n_rules,
                                  rng=RngStream(seed))
    gen = np.random.default_rng(seed)
    for t in model.parameters().values():
        t.data = gen.normal(0.0, 0.2, size=t.data.shape).astype(np.float32)
    return model


def write_raw(path, manifest, blob, version=FORMAT_VERSION, magic=MAGIC):
    raw = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQ", magic, version, len(raw)))
        f.write(raw)
        f.write(blob)


def blob_of(path):
    with open(path, "rb") as f:
        head = f.read(struct.calcsize("<4sIQ"))
        _, _, man_len = struct.unpack("<4sIQ", head)
        f.read(man_len)
        return f.read()


class TestRoundTrip:
    @pytest.mark.parametrize("variant", ["nca", "gca", "mnca", "mnca_noise"])
    def test_weights_bitwise(self, tmp_path, variant):
        model = randomized(variant)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        loaded, manifest = load_checkpoint(p)
        assert loaded.variant == model.variant
        assert loaded.residual == model.residual
        for name, t in model.parameters().items():
            assert np.array_equal(loaded.parameters()[name].data, t.data), name
        assert manifest["model"]["channels"] == model.channels

    def test_save_load_save_identical_bytes(self, tmp_path):
        model = randomized()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, model, config={"variant": "mnca_noise"}, train_steps=17, seed=3)
        loaded, manifest = load_checkpoint(a)
        save_checkpoint(b, loaded, config=manifest["config"],
                        train_steps=manifest["train_steps"], seed=manifest["seed"])
        assert a.read_bytes() == b.read_bytes()

    def test_loaded_model_steps_identically(self, tmp_path):
        model = randomized("mnca", channels=4, hidden=6, n_rules=2)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        loaded, _ = load_checkpoint(p)
        x = Tensor(np.random.default_rng(0).uniform(size=(4, 5, 5)).astype(np.float32))
        opts = StepOptions()
        out_a, _ = step(model, x, opts, RngStream(9))
        out_b, _ = step(loaded, x, opts, RngStream(9))
        assert np.array_equal(out_a.data, out_b.data)

    def test_bookkeeping_round_trips(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model, config={"seed": 5}, train_steps=400, seed=5)
        manifest = read_manifest(p)
        assert manifest["train_steps"] == 400
        assert manifest["seed"] == 5
        assert manifest["config"] == {"seed": 5}
        assert manifest["format_version"] == FORMAT_VERSION


class TestInventory:
    def test_canonical_order_and_offsets(self, tmp_path):
        model = randomized("mnca", channels=3, hidden=4, n_rules=2)
        manifest = build_manifest(model)
        names = [d["name"] for d in manifest["inventory"]]
        assert names == [
            "rule0.w1", "rule0.b1", "rule0.w2", "rule0.b2",
            "rule1.w1", "rule1.b1", "rule1.w2", "rule1.b2",
            "selector.v1", "selector.c1", "selector.v2", "selector.c2",
        ]
        offset = 0
        for d in manifest["inventory"]:
            assert d["offset"] == offset
            offset += int(np.prod(d["shape"])) * 4
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        assert len(blob_of(p)) == offset

    def test_shape_disagreement(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        manifest = read_manifest(p)
        manifest["inventory"][0]["shape"][0] += 1
        write_raw(p, manifest, blob_of(tmp_path / "m.ckpt"))
        with pytest.raises(InventoryError, match="declared shape"):
            load_checkpoint(p)

    def test_name_disagreement(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        manifest = read_manifest(p)
        manifest["inventory"][0]["name"] = "rule0.kernel"
        write_raw(p, manifest, blob_of(p))
        with pytest.raises(InventoryError, match="names"):
            load_checkpoint(p)

    def test_offset_disagreement(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        manifest = read_manifest(p)
        manifest["inventory"][1]["offset"] += 4
        write_raw(p, manifest, blob_of(p))
        with pytest.raises(InventoryError, match="offset"):
            load_checkpoint(p)


class TestCorruption:
    def test_truncated_blob(self, tmp_path):
        model = randomized()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        data = p.read_bytes()
        p.write_bytes(data[:-8])
        with pytest.raises(BlobLengthError, match="blob holds"):
            load_checkpoint(p)

    def test_padded_blob(self, tmp_path):
        model = randomized()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        p.write_bytes(p.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(BlobLengthError):
            load_checkpoint(p)

    def test_version_mismatch(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        write_raw(p, build_manifest(model), blob_of(p), version=FORMAT_VERSION + 1)
        with pytest.raises(VersionError, match="format"):
            load_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, randomized("nca"))
        data = bytearray(p.read_bytes())
        data[:4] = b"JUNK"
        p.write_bytes(bytes(data))
        with pytest.raises(ManifestError, match="bad magic"):
            load_checkpoint(p)

    def test_corrupt_manifest_json(self, tmp_path):
        p = tmp_path / "m.ckpt"
        raw = b"{this is not json"
        with open(p, "wb") as f:
            f.write(struct.pack("<4sIQ", MAGIC, FORMAT_VERSION, len(raw)))
            f.write(raw)
        with pytest.raises(ManifestError, match="corrupt manifest"):
            load_checkpoint(p)

    def test_missing_manifest_key(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        manifest = read_manifest(p)
        del manifest["inventory"]
        write_raw(p, manifest, blob_of(p))
        with pytest.raises(ManifestError, match="inventory"):
            load_checkpoint(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(b"MNC")
        with pytest.raises(ManifestError, match="truncated"):
            load_checkpoint(p)

    def test_unusable_model_description(self, tmp_path):
        model = randomized("nca")
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        manifest = read_manifest(p)
        manifest["model"]["variant"] = "unknown_kind"
        write_raw(p, manifest, blob_of(p))
        with pytest.raises(ManifestError, match="unusable model description"):
            load_checkpoint(p)
