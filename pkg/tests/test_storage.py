import numpy as np
import pytest

from objimportance import model, storage
from objimportance.config import RunConfig
from objimportance.scenes import SceneConfig, generate_dataset

CFG = RunConfig(mlp_hidden=(12, 6))


def scenes_equal(a, b):
    return (np.array_equal(a.grid, b.grid) and a.proposals == b.proposals
            and a.test_proposals == b.test_proposals and a.objects == b.objects
            and (a.split, a.seed, a.index, a.lane_center) == (b.split, b.seed, b.index, b.lane_center))


def test_weights_round_trip_bit_exact(tmp_path):
    params = model.init_params(CFG, seed=4)
    path = tmp_path / "m.weights"
    storage.save_weights(path, params, CFG)
    cfg, loaded = storage.load_weights(path)
    assert cfg == CFG and list(loaded) == list(params)
    for k in params:
        assert loaded[k].dtype == np.float64 and loaded[k].tobytes() == params[k].tobytes()
    assert storage.weights_bytes(loaded, cfg) == path.read_bytes()


def test_weights_bytes_deterministic():
    p = model.init_params(CFG, seed=1)
    assert storage.weights_bytes(p, CFG) == storage.weights_bytes(model.init_params(CFG, seed=1), CFG)


def test_weight_header_hash_mismatch(tmp_path):
    params = model.init_params(CFG)
    raw = bytearray(storage.weights_bytes(params, CFG))
    raw[6] ^= 0xFF  # first byte of the architecture hash
    path = tmp_path / "bad.weights"
    path.write_bytes(bytes(raw))
    with pytest.raises(storage.ConfigMismatch):
        storage.load_weights(path)


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b + b"\0", lambda b: b[:-3]])
def test_malformed_weight_files(tmp_path, mutate):
    path = tmp_path / "bad.weights"
    path.write_bytes(mutate(storage.weights_bytes(model.init_params(CFG), CFG)))
    with pytest.raises(storage.FormatError):
        storage.load_weights(path)


@pytest.mark.parametrize("scfg", [SceneConfig(n_scenes=9), SceneConfig(n_scenes=6, random_lane=True, miss_prob=0.4)])
def test_dataset_round_trip(tmp_path, scfg):
    scenes = generate_dataset(CFG, scfg)
    path = tmp_path / "d.bin"
    storage.save_dataset(path, scenes)
    back = storage.load_dataset(path)
    assert len(back) == len(scenes)
    assert all(scenes_equal(a, b) for a, b in zip(scenes, back))
    assert storage.dataset_bytes(back) == path.read_bytes()
    dims = storage.dataset_dims(path)
    assert dims == {"n_scenes": len(scenes), "frames": CFG.frames, "height": CFG.height,
                    "width": CFG.width, "channels": CFG.channels, "n_proposals": CFG.n_proposals}


def test_dataset_compatibility_check(tmp_path):
    path = tmp_path / "d.bin"
    storage.save_dataset(path, generate_dataset(CFG, SceneConfig(n_scenes=3)))
    dims = storage.dataset_dims(path)
    storage.check_compatible(CFG, dims)
    with pytest.raises(storage.ConfigMismatch, match="channels"):
        storage.check_compatible(CFG.replace(channels=20), dims)


def test_truncated_dataset(tmp_path):
    path = tmp_path / "d.bin"
    storage.save_dataset(path, generate_dataset(CFG, SceneConfig(n_scenes=3)))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(storage.FormatError):
        storage.load_dataset(path)
