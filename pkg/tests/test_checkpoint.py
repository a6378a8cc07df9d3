import numpy as np
import numpy.testing as npt
import pytest

from fesnet.checkpoint import CheckpointError, load_checkpoint, read_meta, save_checkpoint
from fesnet.model import ArchConfig, FesNet
from fesnet.optim import Adam
from fesnet.train import init_rng

from conftest import TINY_ARCH


def _trained_ish_model(seed=3):
    model = FesNet(TINY_ARCH, rng=init_rng(seed))
    for name, arr in model.buffers():
        arr += 0.01 * init_rng(hash(name) % 2**31).standard_normal(arr.shape).astype(arr.dtype)
    return model


def test_round_trip_is_bitwise(tmp_path, rng):
    model = _trained_ish_model()
    x = rng.standard_normal((1, 3, 32, 32)).astype(np.float32)
    before = model.forward(x, train=False)

    path = save_checkpoint(model, tmp_path / "m.fesnet", meta={"seed": 3, "epoch": 7})
    loaded, meta = load_checkpoint(path)
    after = loaded.forward(x, train=False)
    npt.assert_array_equal(before, after)
    assert meta == {"seed": 3, "epoch": 7}


def test_truncated_file_rejected(tmp_path):
    path = save_checkpoint(FesNet(TINY_ARCH, rng=init_rng(0)), tmp_path / "m.fesnet")
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = save_checkpoint(FesNet(TINY_ARCH, rng=init_rng(0)), tmp_path / "m.fesnet")
    with open(path, "ab") as f:
        f.write(b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_version_mismatch_rejected(tmp_path):
    path = save_checkpoint(FesNet(TINY_ARCH, rng=init_rng(0)), tmp_path / "m.fesnet")
    blob = path.read_bytes()
    path.write_bytes(blob.replace(b'"version": 1', b'"version": 2', 1))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_non_checkpoint_file_rejected(tmp_path):
    path = tmp_path / "nope.fesnet"
    path.write_bytes(b"PNG\x00 not a checkpoint at all\n")
    with pytest.raises(CheckpointError, match="not a checkpoint|magic"):
        load_checkpoint(path)


def test_mismatched_widths_name_first_bad_tensor(tmp_path):
    path = save_checkpoint(FesNet(TINY_ARCH, rng=init_rng(0)), tmp_path / "m.fesnet")
    other = FesNet(ArchConfig(pcb_channels=(8, 16, 16, 16), head_channels=(8, 16),
                              feb_channels=(4, 8, 8, 16), fuse_channels=8))
    with pytest.raises(CheckpointError, match="stem.conv.w"):
        load_checkpoint(path, model=other)


def test_meta_readable_without_payload(tmp_path):
    save_checkpoint(FesNet(TINY_ARCH, rng=init_rng(0)), tmp_path / "m.fesnet",
                    meta={"seed": 11, "rng_algorithm": "numpy-pcg64"})
    meta = read_meta(tmp_path / "m.fesnet")
    assert meta["seed"] == 11
    assert meta["rng_algorithm"] == "numpy-pcg64"


def test_optimizer_state_round_trips_header(tmp_path):
    model = FesNet(TINY_ARCH, rng=init_rng(0))
    opt = Adam(model.params())
    for p in model.params():
        p.grad = np.ones_like(p.value)
    opt.step(lr=1e-3)
    path = save_checkpoint(model, tmp_path / "m.fesnet", optimizer=opt)
    _, meta = load_checkpoint(path)
    assert meta["adam_t"] == [1] * len(opt.states)
