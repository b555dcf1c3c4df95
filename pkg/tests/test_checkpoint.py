import numpy as np
import pytest
import torch
import torch.nn as nn

from facediff.checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    arrays_to_optimizer_state,
    arrays_to_state_dict,
    load_checkpoint,
    load_module_weights,
    optimizer_to_arrays,
    save_checkpoint,
    state_dict_to_arrays,
)


def _net():
    torch.manual_seed(0)
    return nn.Sequential(nn.Linear(4, 8), nn.SiLU(), nn.Linear(8, 2))


def test_state_dict_round_trip():
    net = _net()
    arrays = state_dict_to_arrays("net", net.state_dict())
    back = arrays_to_state_dict("net", arrays)
    assert set(back) == set(net.state_dict())
    for k, v in net.state_dict().items():
        assert torch.equal(back[k], v)


def test_prefix_isolation():
    a = state_dict_to_arrays("a", _net().state_dict())
    b = state_dict_to_arrays("b", _net().state_dict())
    merged = {**a, **b}
    assert set(arrays_to_state_dict("a", merged)) == set(_net().state_dict())


def test_save_load_round_trip(tmp_path):
    p = tmp_path / "c.npz"
    arrays = {"net/w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    save_checkpoint(p, arrays, {"iteration": 5})
    back, meta = load_checkpoint(p)
    np.testing.assert_array_equal(back["net/w"], arrays["net/w"])
    assert meta["iteration"] == 5
    assert meta["format_version"] == FORMAT_VERSION


def test_save_is_byte_deterministic(tmp_path):
    arrays = {"b/x": np.ones((3, 3)), "a/y": np.zeros(4, dtype=np.float32)}
    meta = {"iteration": 1, "seed": 2}
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(p1, arrays, meta)
    save_checkpoint(p2, dict(reversed(list(arrays.items()))), dict(meta))
    assert p1.read_bytes() == p2.read_bytes()


def test_load_missing_and_corrupt(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_version_gate(tmp_path):
    p = tmp_path / "c.npz"
    save_checkpoint(p, {}, {})
    arrays, meta = load_checkpoint(p)
    # re-save with a wrong version by hand
    import io, json

    meta["format_version"] = FORMAT_VERSION + 1
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, __meta__=blob)
    p.write_bytes(buf.getvalue())
    with pytest.raises(CheckpointError, match="format version"):
        load_checkpoint(p)


def test_load_module_weights_strict():
    net = _net()
    arrays = state_dict_to_arrays("net", net.state_dict())
    other = _net()
    load_module_weights(other, "net", arrays)
    for a, b in zip(net.parameters(), other.parameters()):
        assert torch.equal(a, b)

    with pytest.raises(CheckpointError, match="mismatch"):
        load_module_weights(nn.Linear(4, 8), "net", arrays)
    bad = dict(arrays)
    bad["net/0.weight"] = np.zeros((3, 3), dtype=np.float32)
    with pytest.raises(CheckpointError, match="shape"):
        load_module_weights(_net(), "net", bad)


def test_optimizer_round_trip(tmp_path):
    net = _net()
    opt = torch.optim.AdamW(net.parameters(), lr=1e-3)
    for _ in range(3):
        loss = net(torch.randn(2, 4)).sum()
        opt.zero_grad()
        loss.backward()
        opt.step()
    arrays, meta = optimizer_to_arrays("opt", opt)
    p = tmp_path / "c.npz"
    save_checkpoint(p, arrays, {"opt": meta})
    back_arrays, back_meta = load_checkpoint(p)
    state = arrays_to_optimizer_state("opt", back_arrays, back_meta["opt"])
    opt2 = torch.optim.AdamW(net.parameters(), lr=1e-3)
    opt2.load_state_dict(state)
    for pid, st in opt.state_dict()["state"].items():
        for k, v in st.items():
            v2 = opt2.state_dict()["state"][pid][k]
            if isinstance(v, torch.Tensor):
                assert torch.equal(v, v2)
            else:
                assert v == v2
