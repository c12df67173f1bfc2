import numpy as np
import pytest

from confrank import checkpoint
from confrank.net.network import RankerConfig, RankerNetwork
from confrank.validation import InvalidInputError

CFG = RankerConfig(capacity_n=8, bpn_channels=4, bpn_depth=2, interleave=1, fpn_channels=4,
                   backbone_channels=(4, 4), image_size=16)


def _trained_like(seed=5):
    net = RankerNetwork(CFG, seed)
    rng = np.random.default_rng(seed)
    for arr in net.parameters.values():
        arr[...] = rng.normal(size=arr.shape)
    return net


def test_round_trip_is_bitwise(tmp_path):
    net = _trained_like()
    path = tmp_path / "model.ckpt"
    checkpoint.save(path, net, {"loss": "rank"})
    back, extra = checkpoint.load(path)
    assert extra == {"loss": "rank"}
    assert back.config == net.config and back.rng_seed == net.rng_seed
    assert sorted(back.parameters) == sorted(net.parameters)
    for name, arr in net.parameters.items():
        assert back.parameters[name].tobytes() == arr.tobytes()
    assert checkpoint.dumps(back, extra) == path.read_bytes()


def test_header_layout():
    data = checkpoint.dumps(RankerNetwork(CFG, 42))
    assert data[:4] == b"CRNK"
    assert int.from_bytes(data[4:8], "little") == checkpoint.FORMAT_VERSION
    assert int.from_bytes(data[8:16], "little", signed=True) == 42


def test_rejects_corruption():
    data = checkpoint.dumps(_trained_like())
    with pytest.raises(InvalidInputError, match="magic"):
        checkpoint.loads(b"XXXX" + data[4:])
    with pytest.raises(InvalidInputError, match="version"):
        checkpoint.loads(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(InvalidInputError, match="truncated"):
        checkpoint.loads(data[:-3])
    with pytest.raises(InvalidInputError, match="trailing"):
        checkpoint.loads(data + b"\0")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "absent.ckpt")
