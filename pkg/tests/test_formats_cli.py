import csv
import json
import struct

import numpy as np
import pytest
from sklearn.preprocessing import StandardScaler

from hbrom import cli, fom, formats, pipeline, rom
from hbrom.exceptions import DivergenceError, FormatError, InstabilityError
from hbrom.pipeline import EpochRecord, TrainConfig

SMALL = {"layers": 2, "hidden": 6, "latent": 3, "enc_hidden": 4, "dec_hidden": 4, "r": 4,
         "epochs": 2, "rtol": 1e-5, "atol": 1e-7}


def rank_two_snapshots():
    t = np.arange(40) * 0.1
    x = np.linspace(0, 1, 16)
    data = np.outer(np.sin(t), np.cos(3 * x)) + np.outer(np.cos(t), x**2)
    return fom.SnapshotSet(t, data, (("u", 16),))


@pytest.fixture(scope="module")
def kpp_pod_file(tmp_path_factory, kpp_desk, kpp_desk_pod):
    path = tmp_path_factory.mktemp("red") / "kpp.pod.json"
    formats.write_json(path, formats.pod_to_doc(kpp_desk_pod, kpp_desk.times, {"source": "kpp"}))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, kpp_pod_file):
    root = tmp_path_factory.mktemp("runs")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    for model in ("node", "hbnode"):
        code = cli.main(["train", "--task", "kpp", "--model", model, "--config", str(cfg),
                         "--data", str(kpp_pod_file), "--out", str(root / model)])
        assert code == 0
    return root


# ---------------------------------------------------------------- snapshots


def test_snapshot_round_trip_bytes():
    snap = fom.SnapshotSet([0.0, 0.5, 1.25], np.arange(12.0).reshape(3, 4) / 7, (("rho", 2), ("m", 2)),
                           fom.EulerParams(2.0, 3.0), "euler")
    blob = formats.encode_snapshots(snap)
    back = formats.decode_snapshots(blob)
    assert formats.encode_snapshots(back) == blob
    assert np.array_equal(back.data, snap.data) and back.params == snap.params
    assert blob[:8] == b"PODSNAP1"


def test_snapshot_error_offsets():
    blob = formats.encode_snapshots(rank_two_snapshots())
    with pytest.raises(FormatError) as info:
        formats.decode_snapshots(b"PODSNAP2" + blob[8:])
    assert info.value.offset == 0
    with pytest.raises(FormatError) as info:
        formats.decode_snapshots(blob[:8] + struct.pack("<I", len(blob)) + blob[12:])
    assert info.value.offset == 8
    (hlen,) = struct.unpack("<I", blob[8:12])
    broken = blob[:12] + b"[" + blob[13:]
    with pytest.raises(FormatError) as info:
        formats.decode_snapshots(broken)
    assert 12 <= info.value.offset < 12 + hlen
    with pytest.raises(FormatError) as info:
        formats.decode_snapshots(blob[:-8])
    assert info.value.offset == 12 + hlen


# ---------------------------------------------------------------- json artifacts


def test_pod_doc_round_trip(rng):
    fluct, mean = rom.center_snapshots(rng.normal(size=(10, 6)))
    basis = rom.pod_fit(fluct, 3, mean=mean)
    doc = formats.pod_to_doc(basis, np.arange(10.0), {"file": "x.snap"})
    back, times, meta = formats.pod_from_doc(json.loads(json.dumps(doc)))
    assert formats.pod_to_doc(back, times, meta) == doc
    assert np.array_equal(back.modes, basis.modes) and meta == {"file": "x.snap"}


def test_dmd_doc_round_trip(rng):
    model = rom.dmd_fit(rng.normal(size=(12, 4)), 3, rom.LiftSpec(("identity", "cos", "sin")))
    doc = formats.dmd_to_doc(model)
    back = formats.dmd_from_doc(json.loads(json.dumps(doc)))
    assert formats.dmd_to_doc(back) == doc
    assert np.array_equal(rom.dmd_predict(back, 4), rom.dmd_predict(model, 4))
    with pytest.raises(FormatError):
        formats.pod_from_doc(doc)


def test_checkpoint_round_trip_bytes():
    cfg = TrainConfig(**dict(SMALL, task="kpp_seq", model="ghbnode", seq_in=4, seq_out=1))
    est = pipeline.LatentODE.from_config(cfg)
    est.net_ = est._build(cfg.r)
    scaler = StandardScaler().fit(np.arange(20.0).reshape(5, 4))
    ckpt = formats.Checkpoint.from_model(est, cfg, scaler, np.ones((4, 4)), 2.0, 0.1)
    text = ckpt.dumps()
    again = formats.Checkpoint.loads(text)
    assert again.dumps() == text
    doc = json.loads(text)
    assert doc["model_kind"] == "ghbnode" and "chi" in doc["xi_param"]
    assert np.allclose(again.denormalize(again.normalize([[1.0, 2, 3, 4]])), [[1.0, 2, 3, 4]])
    with pytest.raises(FormatError):
        formats.Checkpoint.loads(text[:-20])


def test_metrics_round_trip_bytes():
    recs = [EpochRecord(1, 0.5, 0.25, 100, 200, 3.5, 1.0, 0.1), EpochRecord(2, 1 / 3, 0.2, 98, 190, 2.0, 0.9, 0.1)]
    text = formats.metrics_to_csv(recs)
    assert text.splitlines()[0] == ",".join(formats.METRICS_HEADER)
    back = formats.metrics_from_csv(text)
    assert formats.metrics_to_csv(back) == text
    assert back[1].train_mse == 1 / 3
    with pytest.raises(FormatError):
        formats.metrics_from_csv("epoch,loss\r\n1,2\r\n")


# ---------------------------------------------------------------- simulate / reduce


def test_simulate_kpp_desk(tmp_path, capsys):
    out = tmp_path / "kpp.snap"
    assert cli.main(["simulate", "kpp", "--out", str(out)]) == 0
    snap = formats.read_snapshots(out)
    assert (snap.n_t, snap.n_dof) == (300, 1024)
    assert "nt=300 ndof=1024" in capsys.readouterr().out


def test_simulate_rejects_out_of_range_parameter(tmp_path, capsys):
    code = cli.main(["simulate", "euler", "--eta-u", "5", "--eta-rho", "3", "--out", str(tmp_path / "e.snap")])
    assert code == 2
    assert "eta" in capsys.readouterr().err


def test_reduce_rank_two_table(tmp_path, capsys):
    src = tmp_path / "two.snap"
    formats.write_snapshots(src, rank_two_snapshots())
    code = cli.main(["reduce", "pod", str(src), "--rank", "2", "--out", str(tmp_path / "two.pod.json"), "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    info = {row["r"]: row["I"] for row in payload["info"]}
    assert info[2] == pytest.approx(1.0, abs=1e-12)
    assert info[1] < 1.0
    basis, times, _ = formats.pod_from_doc(formats.read_json(tmp_path / "two.pod.json"))
    assert basis.coeffs.shape == (40, 2) and times.shape == (40,)


def test_reduce_dmd_prints_moduli(tmp_path, capsys):
    src = tmp_path / "vks.snap"
    assert cli.main(["simulate", "synthetic-vks", "--out", str(src)]) == 0
    capsys.readouterr()
    assert cli.main(["reduce", "dmd", str(src), "--rank", "4", "--out", str(tmp_path / "v.dmd.json")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["r", "I(r)"]
    assert "eigenvalue moduli" in text
    model = formats.dmd_from_doc(formats.read_json(tmp_path / "v.dmd.json"))
    assert model.eigenvalues.shape == (4,)


def test_reduce_missing_input(tmp_path, capsys):
    assert cli.main(["reduce", "pod", str(tmp_path / "nope.snap"), "--rank", "2", "--out", str(tmp_path / "x")]) == 2
    assert "nope.snap" in capsys.readouterr().err


# ---------------------------------------------------------------- train / predict / report


def test_train_writes_metrics(trained):
    for model in ("node", "hbnode"):
        records = formats.read_metrics(trained / model / "metrics.csv")
        assert [r.epoch for r in records] == [1, 2]
        assert all(np.isfinite(r.val_mse) and r.fwd_nfe > 0 and r.bwd_nfe > 0 for r in records)
        meta = formats.read_json(trained / model / "run.json")
        assert meta["model"] == model and meta["epochs"] == 2


def test_train_missing_artifact(tmp_path, capsys):
    missing = tmp_path / "absent.pod.json"
    code = cli.main(["train", "--task", "kpp", "--data", str(missing), "--out", str(tmp_path / "run")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_predict_horizon_zero_is_header_only(trained, tmp_path):
    out = tmp_path / "p.csv"
    assert cli.main(["predict", str(trained / "hbnode" / "checkpoint.json"), "--horizon", "0", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows == [["t", "alpha_1", "alpha_2", "alpha_3", "alpha_4"]]


def test_predict_reconstructs_fields(trained, tmp_path):
    out, fields = tmp_path / "p.csv", tmp_path / "f.csv"
    code = cli.main(["predict", str(trained / "node" / "checkpoint.json"), "--horizon", "3",
                     "--out", str(out), "--reconstruct", str(fields)])
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 4
    t = [float(r[0]) for r in rows[1:]]
    assert np.allclose(np.diff(t), t[1] - t[0]) and t[1] > t[0]
    grid = list(csv.reader(fields.open()))
    assert len(grid) == 4 and all(len(r) == 1024 for r in grid)


def test_predict_task_mismatch(trained, tmp_path, capsys):
    code = cli.main(["predict", str(trained / "node" / "checkpoint.json"), "--horizon", "1",
                     "--task", "vks-full", "--out", str(tmp_path / "p.csv")])
    assert code == 2
    assert "kpp_seq" in capsys.readouterr().err


def test_report_compares_models(trained, capsys):
    code = cli.main(["report", str(trained / "node"), str(trained / "hbnode"), "--out", str(trained / "r.json")])
    assert code == 0
    summary = json.loads((trained / "r.json").read_text())
    assert isinstance(summary["hbnode_val_mse_lower"], bool)
    assert {g["model"] for g in summary["groups"]} == {"node", "hbnode"}
    assert "hbnode_val_mse_lower" in capsys.readouterr().out


# ---------------------------------------------------------------- exit codes


def test_instability_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise InstabilityError("non-finite state at t=0.1")

    monkeypatch.setattr(fom, "kpp_simulate", boom)
    assert cli.main(["simulate", "kpp", "--out", str(tmp_path / "k.snap")]) == 3


def test_divergence_exit_code_keeps_partial_metrics(tmp_path, monkeypatch, kpp_pod_file):
    def diverge(data, cfg, *args, **kwargs):
        run = pipeline.TrainRun([EpochRecord(1, 0.5, 0.4, 10, 20, 1.0, 1.0, 1.0)], config=cfg)
        exc = DivergenceError("loss became nan", epoch=2)
        exc.run = run
        raise exc

    monkeypatch.setattr(pipeline, "train_seq2seq", diverge)
    out = tmp_path / "run"
    code = cli.main(["train", "--task", "kpp", "--epochs", "3", "--data", str(kpp_pod_file), "--out", str(out)])
    assert code == 4
    assert [r.epoch for r in formats.read_metrics(out / "metrics.csv")] == [1]
