import numpy as np
import pytest

from travelgan import trainer as T
from travelgan.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, read_manifest, save_checkpoint
from travelgan.data import DatasetSpec, gen_domain, to_tensor
from travelgan.networks import ArchitectureSpec, forward

ARCH = ArchitectureSpec(image_size=16, base_filters=4, latent_dim=8)


@pytest.fixture(scope="module")
def data():
    x = to_tensor(gen_domain(DatasetSpec(kind="beads", count=16, seed=4, image_size=16))[0])
    y = to_tensor(gen_domain(DatasetSpec(kind="grid", count=16, seed=4, image_size=16))[0])
    return x, y


def cfg(steps, **kw):
    return T.TrainingConfig(arch=ARCH, batch_size=4, steps=steps, seed=9, **kw)


@pytest.fixture(scope="module")
def trained(data):
    return T.train(cfg(3), *data)


def test_round_trip_forward_bit_exact(tmp_path, trained, data):
    path = save_checkpoint(trained, tmp_path / "a.trvl")
    loaded = load_checkpoint(path)
    assert loaded.step == 3 and loaded.config == trained.config
    for name, net in trained.nets.items():
        for mode in ("eval", "train"):
            a = forward(net, data[0][:4], mode, update_stats=False).data
            b = forward(loaded.nets[name], data[0][:4], mode, update_stats=False).data
            assert np.array_equal(a, b), (name, mode)
    assert list(loaded.history) == list(trained.history)


def test_resave_byte_identical(tmp_path, trained):
    path = save_checkpoint(trained, tmp_path / "a.trvl")
    again = checkpoint_bytes(load_checkpoint(path))
    assert again == path.read_bytes()


def test_manifest_contents(trained):
    manifest, _ = read_manifest(checkpoint_bytes(trained))
    assert manifest["step"] == 3 and manifest["format_version"] == 1
    names = {e["name"] for e in manifest["tensors"]}
    assert any("/running/" in n for n in names) and any(n.startswith("adam/") for n in names)
    offsets = [e["offset"] for e in manifest["tensors"]]
    assert offsets == sorted(offsets)


def test_resume_matches_unbroken_run(tmp_path, data):
    x, y = data
    full_sink = T.MemorySink()
    full = T.train(cfg(6), x, y, full_sink)
    half = T.train(cfg(3), x, y)
    save_checkpoint(half, tmp_path / "half.trvl")
    resume_sink = T.MemorySink()
    resumed = T.train(cfg(6), x, y, resume_sink, state=load_checkpoint(tmp_path / "half.trvl"))
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    assert strip(resume_sink.rows) == strip(full_sink.rows[3:])
    for name in full.nets:
        a = forward(full.nets[name], x[:4], "eval").data
        b = forward(resumed.nets[name], x[:4], "eval").data
        assert np.array_equal(a, b), name


def test_bad_magic(tmp_path, trained):
    blob = bytearray(checkpoint_bytes(trained))
    blob[:4] = b"NOPE"
    (tmp_path / "x.trvl").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "x.trvl")


def test_version_mismatch(tmp_path, trained):
    blob = bytearray(checkpoint_bytes(trained))
    blob[4] = 7
    (tmp_path / "x.trvl").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "x.trvl")


@pytest.mark.parametrize("cut", [6, 40, -10])
def test_truncated(tmp_path, trained, cut):
    blob = checkpoint_bytes(trained)
    (tmp_path / "x.trvl").write_bytes(blob[:cut])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "x.trvl")


def test_architecture_mismatch(tmp_path):
    small = T.init_state(T.TrainingConfig(arch=ArchitectureSpec(32, 4, 8), directions="xy_only"))
    save_checkpoint(small, tmp_path / "d32.trvl")
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(tmp_path / "d32.trvl", T.TrainingConfig(arch=ArchitectureSpec(64, 4, 8), directions="xy_only"))
    load_checkpoint(tmp_path / "d32.trvl", T.TrainingConfig(arch=ArchitectureSpec(32, 4, 8), directions="xy_only"))


def test_layout_mismatch(tmp_path):
    state = T.init_state(T.TrainingConfig(arch=ARCH, directions="xy_only"))
    save_checkpoint(state, tmp_path / "a.trvl")
    with pytest.raises(CheckpointError, match="layout"):
        load_checkpoint(tmp_path / "a.trvl", T.TrainingConfig(arch=ARCH, directions="both"))
