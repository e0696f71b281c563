
import numpy as np
import pytest
import torch
import torch.nn.functional as F

from sslkit.checkpoint import (
    MAGIC,
    CheckpointFormatError,
    CheckpointState,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from sslkit.data import LoaderConfig, ViewLoader, synth_blobs
from sslkit.trainer import (
    OptimizerState,
    ProbeMetrics,
    TrainConfig,
    TrainingAborted,
    config_text,
    cosine_lr,
    create_session,
    export_metrics,
    fit,
    parse_config_text,
    read_metrics,
    resume,
    session_to_checkpoint,
    sgd_step,
    topk_accuracy,
)

from helpers import TINY_SHAPE, tiny_config


def _param(value, grad):
    p = torch.tensor([value], requires_grad=True)
    p.grad = torch.tensor([grad])
    return p


# --- sgd / schedule ---------------------------------------------------------


def test_sgd_single_step():
    p = _param(1.0, 1.0)
    sgd_step([("p", p)], OptimizerState(lr=0.1))
    assert float(p.detach()) == pytest.approx(0.9)


def test_sgd_two_steps_follow_recurrence():
    p = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    opt = OptimizerState(lr=0.1, momentum=0.9, weight_decay=0.01)
    theta, v = 1.0, 0.0
    for g in (0.5, -0.25):
        p.grad = torch.tensor([g], dtype=torch.float64)
        sgd_step([("p", p)], opt)
        v = 0.9 * v + g + 0.01 * theta
        theta = theta - 0.1 * v
    assert p.item() == pytest.approx(theta, abs=1e-15)
    assert float(opt.buffers["p"]) == pytest.approx(v, abs=1e-15)


def test_sgd_zero_grad_is_noop_and_missing_grad_skipped():
    p = _param(2.0, 0.0)
    q = torch.tensor([3.0], requires_grad=True)
    sgd_step([("p", p), ("q", q)], OptimizerState(lr=0.5))
    assert p.tolist() == [2.0] and q.tolist() == [3.0]


def test_sgd_rejects_nonfinite_grad():
    from sslkit.ndiff import NonFiniteError

    with pytest.raises(NonFiniteError):
        sgd_step([("p", _param(1.0, float("inf")))], OptimizerState(lr=0.1))


def test_cosine_schedule_examples():
    assert cosine_lr(0, 100, 0.4, 10) == 0.0
    assert cosine_lr(10, 100, 0.4, 10) == pytest.approx(0.4)
    assert cosine_lr(100, 100, 0.4, 10) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(55, 100, 0.4, 10) == pytest.approx(0.2)
    values = [cosine_lr(k, 100, 0.4, 10) for k in range(101)]
    assert min(values) >= 0
    # continuous at the end of warm-up
    assert abs(cosine_lr(9, 100, 0.4, 10) - cosine_lr(10, 100, 0.4, 10)) <= 0.04 + 1e-12
    assert cosine_lr(0, 10, 1.0, 0) == 1.0
    with pytest.raises(ValueError):
        cosine_lr(0, 10, 1.0, 10)


def test_topk_accuracy():
    logits = torch.tensor([[0.1, 0.9, 0.0], [0.8, 0.1, 0.1], [0.2, 0.3, 0.5]])
    labels = torch.tensor([1, 1, 0])
    top1, top2 = topk_accuracy(logits, labels, (1, 2))
    assert top1 == pytest.approx(100 / 3) and top2 == pytest.approx(200 / 3)
    assert topk_accuracy(logits, labels, (5,)) == [100.0]


def test_probe_metrics_validation():
    with pytest.raises(ValueError):
        ProbeMetrics(1, top1=80.0, top5=70.0, loss=1.0, seconds=1.0)
    with pytest.raises(ValueError):
        ProbeMetrics(1, top1=10.0, top5=101.0, loss=1.0, seconds=1.0)


# --- metrics CSV ------------------------------------------------------------


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    export_metrics([ProbeMetrics(1, 50.0, 90.0, 2.5, 1.25)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,top1,top5,seconds" and len(lines) == 2
    export_metrics([ProbeMetrics(2, 60.0, 95.0, 2.0, 1.5)], path)
    rows = read_metrics(path)
    assert [r.epoch for r in rows] == [1, 2]
    assert rows[1] == ProbeMetrics(2, 60.0, 95.0, 2.0, 1.5)


# --- checkpoint format ------------------------------------------------------


def _state():
    return CheckpointState(
        "a=1\nb=two\n",
        {
            "w": np.arange(6, dtype=np.float32).reshape(2, 3),
            "d": np.array([1.5, -2.0]),
            "i": np.array([[7]], dtype=np.int64),
            "flag": np.array([True, False]),
            "scalar": np.array(3, dtype=np.int32),
            "bytes": np.array([1, 255], dtype=np.uint8),
        },
    )


def test_checkpoint_layout_prefix():
    raw = encode(_state())
    assert raw[:5] == MAGIC
    assert int.from_bytes(raw[5:9], "little") == 1
    n = int.from_bytes(raw[9:13], "little")
    assert raw[13 : 13 + n] == b"a=1\nb=two\n"
    assert int.from_bytes(raw[13 + n : 17 + n], "little") == 6


def test_checkpoint_round_trip_bytes(tmp_path):
    st = _state()
    a = tmp_path / "a.slck"
    save_checkpoint(st, a)
    back = load_checkpoint(a)
    assert back.config_text == st.config_text
    for k, v in st.blobs.items():
        assert back.blobs[k].dtype == v.dtype and np.array_equal(back.blobs[k], v)
    assert back.parameter_count() == st.parameter_count() == 6 + 2 + 1 + 2 + 1 + 2
    b = tmp_path / "b.slck"
    save_checkpoint(back, b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_bad_magic():
    raw = bytearray(encode(_state()))
    raw[2] ^= 0xFF
    with pytest.raises(CheckpointFormatError) as err:
        decode(bytes(raw))
    assert err.value.offset == 0


def test_checkpoint_truncation_reports_offset():
    raw = encode(_state())
    for cut in (3, 11, 20, len(raw) - 1):
        with pytest.raises(CheckpointFormatError) as err:
            decode(raw[:cut])
        assert 0 <= err.value.offset <= cut


def test_checkpoint_rejects_trailing_bytes_and_version():
    raw = encode(_state())
    with pytest.raises(CheckpointFormatError):
        decode(raw + b"\x00")
    bad = bytearray(raw)
    bad[5] = 9
    with pytest.raises(CheckpointFormatError, match="version"):
        decode(bytes(bad))


# --- fit / resume -----------------------------------------------------------


def _setup(name="simclr", epochs=3, seed=0, n_per_class=32, classes=2, workers=2, **over):
    ds = synth_blobs(classes, n_per_class, shape=TINY_SHAPE, noise=0.1, seed=1)
    mc = tiny_config(name, n_items=len(ds), **over)
    tc = TrainConfig(epochs=epochs, lr=0.05, seed=seed, warmup_epochs=0.5)
    loader = ViewLoader(ds, LoaderConfig(batch_size=16, workers=workers, buffer=2, seed=seed), mc.policies)
    return mc, tc, ds, loader


def test_epochs_zero_changes_nothing(tmp_path):
    mc, tc, ds, loader = _setup()
    session = create_session(mc, tc, 2)
    before = {k: v.clone() for k, v in session.method.state_dict().items()}
    rows = []
    assert fit(session, loader, epochs=0, sinks=[rows.append], checkpoint_dir=tmp_path) is None
    assert rows == [] and session.loss_trace == []
    assert all(torch.equal(before[k], v) for k, v in session.method.state_dict().items())
    assert list(tmp_path.iterdir()) == []


def test_probe_gradients_do_not_reach_backbone():
    mc, tc, ds, loader = _setup()
    session = create_session(mc, tc, 2)
    batch = next(loader.iter_epoch(0))
    _, _, feats = session.method.training_step(batch)
    F.cross_entropy(session.probe(feats), batch.labels).backward()
    assert all(p.grad is None for p in session.method.parameters())
    assert session.probe.weight.grad is not None


def test_fit_writes_metrics_and_rotates_checkpoints(tmp_path):
    mc, tc, ds, loader = _setup(epochs=3)
    session = create_session(mc, tc, 2)
    rows = []
    fit(session, loader, sinks=[rows.append], checkpoint_dir=tmp_path)
    assert [r.epoch for r in rows] == [1, 2, 3]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt-epoch0002.slck", "ckpt-epoch0003.slck"]
    assert len(session.loss_trace) == 3 * len(loader)
    assert session.global_step == int(session.method.global_step)


@pytest.mark.parametrize("name", ["simclr", "byol", "deepclusterv2", "mocov2plus"])
def test_resume_reproduces_loss_trace_bit_exactly(tmp_path, name):
    mc, tc, ds, loader = _setup(name, epochs=4)
    full = create_session(mc, tc, 2)
    fit(full, loader)

    part = create_session(mc, tc, 2)
    fit(part, loader, epochs=2, checkpoint_dir=tmp_path)
    resumed = resume(tmp_path / "ckpt-epoch0002.slck")
    assert resumed.epoch == 2 and resumed.loss_trace == part.loss_trace
    fit(resumed, loader)
    assert resumed.loss_trace == full.loss_trace
    sa, sb = full.method.state_dict(), resumed.method.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert [m.row()[:4] for m in resumed.history] == [m.row()[:4] for m in full.history]


def test_checkpoint_of_session_round_trips(tmp_path):
    mc, tc, ds, loader = _setup("dino", epochs=1)
    session = create_session(mc, tc, 2)
    fit(session, loader, checkpoint_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / "ckpt-epoch0001.slck")
    again = session_to_checkpoint(resume(tmp_path / "ckpt-epoch0001.slck"))
    assert encode(again) == encode(ckpt)
    n_params = sum(p.numel() for p in session.method.parameters())
    assert sum(b.size for k, b in ckpt.blobs.items() if k.startswith("method.")) >= n_params


def test_config_text_round_trip():
    mc, tc, _, _ = _setup("ressl")
    m2, t2, k = parse_config_text(config_text(mc, tc, 10))
    assert m2 == mc and t2 == tc and k == 10


def test_nonfinite_loss_aborts_keeping_last_checkpoint(tmp_path):
    mc, tc, ds, loader = _setup(epochs=3)
    session = create_session(mc, tc, 2)
    fit(session, loader, epochs=1, checkpoint_dir=tmp_path)
    with torch.no_grad():
        next(session.method.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingAborted) as err:
        fit(session, loader, checkpoint_dir=tmp_path)
    assert err.value.last_checkpoint == tmp_path / "ckpt-epoch0001.slck"
    assert err.value.last_checkpoint.exists()


def test_simclr_separates_two_blobs():
    # 2 well separated classes; probe measured on a held-out split
    ds = synth_blobs(2, 128, shape=TINY_SHAPE, noise=0.1, seed=3)
    val = synth_blobs(2, 50, shape=TINY_SHAPE, noise=0.1, seed=3, split=1)
    mc = tiny_config("simclr")
    session = create_session(mc, TrainConfig(epochs=3, lr=0.05, seed=0), 2)
    loader = ViewLoader(ds, LoaderConfig(batch_size=32, workers=1, buffer=2, seed=0), mc.policies)
    last = fit(session, loader, val=val)
    assert last.top1 >= 90.0
