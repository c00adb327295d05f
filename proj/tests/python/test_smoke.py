import json

import numpy as np
import pytest

import tsm


def small_spec(frames=4, placement="residual", mode="bi"):
    block = {
        "conv1": {"in": 4, "out": 4, "kernel": 3, "stride": 1, "padding": 1},
        "conv2": {"in": 4, "out": 4, "kernel": 3, "stride": 1, "padding": 1},
        "placement": placement,
        "shift": {"n_fwd": 1, "n_bwd": 1 if mode == "bi" else 0, "padding": "zero", "mode": mode},
    }
    return json.dumps({
        "input": {"c": 2, "h": 5, "w": 5, "t": frames},
        "stem": {"in": 2, "out": 4, "kernel": 3, "stride": 1, "padding": 1},
        "blocks": [block, block],
        "head": {"classes": 3},
    })


def test_worked_shift_example():
    x = np.zeros((1, 3, 4, 1, 1), dtype=np.float32)
    for c in range(4):
        for t in range(3):
            x[0, t, c, 0, 0] = 10 * c + t
    y = tsm.shift_offline(x, tsm.ShiftSpec(1, 1))
    assert y[0, :, 0, 0, 0].tolist() == [0, 0, 1]
    assert y[0, :, 1, 0, 0].tolist() == [11, 12, 0]
    assert np.array_equal(y[0, :, 2:], x[0, :, 2:])


def test_shift_paths_agree_and_adjoint_holds():
    rng = np.random.default_rng(0)
    spec = tsm.ShiftSpec(2, 3, tsm.Padding.CIRCULAR)
    x = rng.standard_normal((2, 5, 8, 3, 3))
    g = rng.standard_normal(x.shape)
    assert np.array_equal(tsm.shift_offline(x.astype(np.float32), spec),
                          tsm.shift_offline_naive(x.astype(np.float32), spec))
    lhs = np.vdot(tsm.shift_offline(x, spec), g)
    rhs = np.vdot(x, tsm.shift_adjoint(g, spec))
    assert abs(lhs - rhs) <= 1e-10


def test_invalid_spec_raises():
    with pytest.raises(tsm.InvalidSpec):
        tsm.shift_offline(np.zeros((1, 2, 2, 1, 1), np.float32), tsm.ShiftSpec(2, 1))


def test_network_streaming_matches_offline():
    net = tsm.Network(small_spec(mode="uni"), seed=3)
    clip = np.random.default_rng(1).standard_normal((1, 4, 2, 5, 5)).astype(np.float32)
    offline = net.forward(clip)
    stream = tsm.Stream(net)
    for t in range(4):
        logits, consensus = stream.step(net, clip[:, t])
        assert np.max(np.abs(logits - offline[:, t])) <= 1e-5
    assert np.max(np.abs(consensus - tsm.consensus_average(offline))) <= 1e-6
    assert stream.cache_bytes == 2 * 1 * 5 * 5 * 4


def test_shifts_cost_nothing():
    with_shift = tsm.Network(small_spec(), seed=0).cost()
    without = tsm.Network(small_spec(placement="none"), seed=0).cost()
    assert with_shift == without


def test_round_trip_and_corruption(tmp_path):
    net = tsm.Network(small_spec(), seed=5)
    net.save(str(tmp_path / "s.json"), str(tmp_path / "w.tsmw"))
    back = tsm.Network.load(str(tmp_path / "s.json"), str(tmp_path / "w.tsmw"))
    for name, w in net.weights().items():
        assert np.array_equal(back.weights()[name], w)
    x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 2, 2)
    tsm.write_tensor(str(tmp_path / "x.tsmt"), x)
    assert np.array_equal(tsm.read_tensor(str(tmp_path / "x.tsmt")), x)
    data = (tmp_path / "x.tsmt").read_bytes()
    (tmp_path / "bad.tsmt").write_bytes(data[:-3])
    with pytest.raises(tsm.FormatError):
        tsm.read_tensor(str(tmp_path / "bad.tsmt"))


def test_dataset_pairs_are_time_reversals():
    clips, labels = tsm.gen_dataset(4, 10)
    assert clips.shape == (10, 8, 1, 16, 16)
    assert labels.sum() == 5
    for k in range(0, 10, 2):
        assert labels[k] != labels[k + 1]
        assert np.array_equal(tsm.reverse_time(clips[k:k + 1]), clips[k + 1:k + 2])


def test_short_training_run():
    cfg = json.dumps({"epochs": 1, "train_size": 16, "test_size": 8, "frames": 4, "height": 8, "width": 8})
    net, history = tsm.train_toy(cfg)
    assert len(history) == 1
    assert 0.0 <= history[0]["test_acc"] <= 1.0
    assert net.num_classes == 2


def test_bench_rows():
    rows = tsm.bench_shift((1, 4, 8, 4, 4), ["0", "1/2"], reps=20)
    assert [r["label"] for r in rows] == ["shift 0", "shift 1/2"]
    assert rows[1]["bytes_moved"] == tsm.bytes_moved(tsm.ShiftSpec(2, 2), (1, 4, 8, 4, 4))
