import struct
import zlib

import numpy as np
import pytest

from bayescnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from bayescnn.config import RunConfig, load_config, parse_config
from bayescnn.data import synth_generate
from bayescnn.errors import CheckpointError, InputError
from bayescnn.layers import Prior
from bayescnn.metrics import confusion, report
from bayescnn.network import BayesianNetwork, mlp_spec, preset
from bayescnn.training import predict_classes


@pytest.fixture
def saved(tmp_path):
    net = BayesianNetwork(mlp_spec(5, (4,), adaptive=True), Prior("scale_mixture", 0.5, 0.25, 1.0, 0.1),
                          np.random.default_rng(0))
    path = tmp_path / "m.bvar"
    save_checkpoint(Checkpoint(net, {"learning_rate": 0.01}, seed=3, split_seed=4, extra={"mc_samples": 9}), path)
    return net, path


def test_round_trip_bitwise(saved):
    net, path = saved
    ck = load_checkpoint(path)
    for (na, a), (nb, b) in zip(net.named_parameters(), ck.model.named_parameters()):
        assert na == nb
        assert a.data.tobytes() == b.data.tobytes()
        assert a.shape == b.shape
    assert ck.model.prior == net.prior
    assert (ck.seed, ck.split_seed, ck.extra, ck.training_config) == (3, 4, {"mc_samples": 9}, {"learning_rate": 0.01})


def test_header(saved):
    _, path = saved
    buf = path.read_bytes()
    assert buf[:4] == b"BVAR"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    assert struct.unpack("<I", buf[-4:])[0] == zlib.crc32(buf[:-4])


@pytest.mark.parametrize("keep", [3, 10, 40, -5])
def test_truncated(saved, keep):
    _, path = saved
    buf = path.read_bytes()
    path.write_bytes(buf[:keep])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bad_magic(saved):
    _, path = saved
    buf = bytearray(path.read_bytes())
    buf[0:4] = b"NOPE"
    path.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_corrupted_payload(saved):
    _, path = saved
    buf = bytearray(path.read_bytes())
    buf[len(buf) // 2] ^= 0xFF
    path.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_wrong_version(saved):
    _, path = saved
    buf = bytearray(path.read_bytes())
    buf[4:8] = struct.pack("<I", 99)
    body = bytes(buf[:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.bvar")


def test_preset_checkpoint_evaluates_identically(tmp_path):
    net = BayesianNetwork(preset("bayesian_cnn", (3, 16, 16)), rng=np.random.default_rng(1))
    path = tmp_path / "cnn.bvar"
    save_checkpoint(Checkpoint(net, seed=1), path)
    data = synth_generate(10, 16, seed=0)
    x = np.stack([it.pixels for it in data])
    y = np.array([it.label for it in data])
    outs = []
    for _ in range(2):
        model = load_checkpoint(path).model
        pred = predict_classes(model, x, n_samples=3, rng=np.random.default_rng(5))
        outs.append(report(confusion(pred, y)))
    assert outs[0] == outs[1]


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        tc = cfg.training_config()
        assert (tc.learning_rate, tc.batch_size, tc.optimizer) == (0.0001, 64, "sgd")

    def test_overrides(self):
        cfg = parse_config("arch = bayesian_cnn\noptimizer = adam\nlearning_rate = 3e-4\nepochs = 5  # short\n")
        tc = cfg.training_config()
        assert (tc.learning_rate, tc.batch_size, tc.optimizer, tc.epochs) == (3e-4, 128, "adam", 5)

    def test_prior_and_pools(self):
        cfg = parse_config("prior = scale_mixture\nmixture_pi = 0.25\npool_after = 1,3\n")
        assert cfg.prior_obj() == Prior("scale_mixture", pi=0.25, sigma1=1.0, sigma2=0.05)
        assert cfg.pool_positions() == (1, 3)

    def test_unknown_key(self):
        with pytest.raises(InputError, match="unknown"):
            parse_config("learningrate = 1")

    def test_bad_value(self):
        with pytest.raises(InputError):
            parse_config("epochs = many")

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_config(tmp_path / "none.cfg")
