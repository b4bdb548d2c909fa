"""On-disk formats: snapshot files, reduction artifacts, checkpoints, metrics.

Snapshot file layout::

    b"PODSNAP1" | u32 LE header length | UTF-8 JSON header | f64 LE payload

The payload holds ``nt * ndof`` values in row-major order (one snapshot per
row). JSON documents use Python's shortest round-trip float repr, so every
format re-serializes byte-identically after a read.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .fom import EulerParams, SnapshotSet
from .pipeline import EpochRecord, LatentODE, TrainConfig
from .rom import DmdModel, LiftSpec, PodBasis

MAGIC = b"PODSNAP1"
SNAPSHOT_VERSION = 1
CHECKPOINT_VERSION = 1
METRICS_HEADER = ("epoch", "train_mse", "val_mse", "fwd_nfe", "bwd_nfe", "stiffness", "adj_norm_t0", "adj_norm_tT")
_INT_COLUMNS = {"epoch", "fwd_nfe", "bwd_nfe"}


def _dumps(doc):
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _pack(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": _floats(a)}


def _unpack(d, what="array"):
    try:
        shape = tuple(int(s) for s in d["shape"])
        data = np.array(d["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed {what}: {exc}") from exc
    if data.size != int(np.prod(shape)):
        raise FormatError(f"malformed {what}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def _pack_complex(a):
    a = np.asarray(a, dtype=complex)
    return {"real": _pack(a.real), "imag": _pack(a.imag)}


def _unpack_complex(d, what="complex array"):
    return _unpack(d["real"], what) + 1j * _unpack(d["imag"], what)


# ---------------------------------------------------------------- snapshots


def encode_snapshots(snap: SnapshotSet) -> bytes:
    header = {
        "version": SNAPSHOT_VERSION,
        "source": snap.source,
        "nt": snap.n_t,
        "ndof": snap.n_dof,
        "fields": [{"name": n, "size": s} for n, s in snap.fields],
        "times": _floats(snap.times),
    }
    if snap.params is not None:
        header["params"] = {"eta_u": float(snap.params.eta_u), "eta_rho": float(snap.params.eta_rho)}
    hb = json.dumps(header, separators=(",", ":"), allow_nan=False).encode("utf-8")
    payload = np.ascontiguousarray(snap.data, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<I", len(hb)) + hb + payload


def decode_snapshots(blob: bytes) -> SnapshotSet:
    if len(blob) < 12:
        raise FormatError("file too short for a snapshot header", offset=len(blob))
    if blob[:8] != MAGIC:
        raise FormatError(f"bad magic {blob[:8]!r}", offset=0)
    (hlen,) = struct.unpack("<I", blob[8:12])
    if 12 + hlen > len(blob):
        raise FormatError(f"header length {hlen} runs past end of file", offset=8)
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("header is not UTF-8", offset=12 + exc.start) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"header JSON: {exc.msg}", offset=12 + exc.pos) from exc
    try:
        nt, ndof = int(header["nt"]), int(header["ndof"])
        times = np.array(header["times"], dtype=float)
        fields = tuple((f["name"], int(f["size"])) for f in header["fields"])
        source = header["source"]
        version = header["version"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"header field missing or invalid: {exc}", offset=12) from exc
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}", offset=12)
    start = 12 + hlen
    expected = nt * ndof * 8
    if len(blob) - start != expected:
        raise FormatError(f"payload has {len(blob) - start} bytes, expected {expected}", offset=start)
    if times.shape != (nt,) or np.any(np.diff(times) <= 0):
        raise FormatError("times must hold nt strictly increasing values", offset=12)
    data = np.frombuffer(blob, dtype="<f8", offset=start).reshape(nt, ndof).astype(float)
    params = None
    if "params" in header:
        params = EulerParams(float(header["params"]["eta_u"]), float(header["params"]["eta_rho"]))
    try:
        return SnapshotSet(times, data, fields, params, source)
    except ValueError as exc:
        raise FormatError(str(exc), offset=start) from exc


def write_snapshots(path, snap: SnapshotSet):
    Path(path).write_bytes(encode_snapshots(snap))


def read_snapshots(path) -> SnapshotSet:
    return decode_snapshots(Path(path).read_bytes())


# ---------------------------------------------------------------- reductions


def pod_to_doc(basis: PodBasis, times=None, meta=None):
    doc = {
        "version": 1,
        "kind": "pod",
        "mean": _pack(basis.mean),
        "eigenvalues": _pack(basis.eigenvalues),
        "coeffs": _pack(basis.coeffs),
        "modes": _pack(basis.modes),
    }
    if times is not None:
        doc["times"] = _floats(times)
    if meta:
        doc["meta"] = meta
    return doc


def pod_from_doc(doc):
    if doc.get("kind") != "pod":
        raise FormatError(f"expected a pod artifact, got {doc.get('kind')!r}")
    basis = PodBasis(
        _unpack(doc["mean"], "mean"), _unpack(doc["eigenvalues"], "eigenvalues"),
        _unpack(doc["coeffs"], "coeffs"), _unpack(doc["modes"], "modes"),
    )
    times = np.array(doc["times"], dtype=float) if "times" in doc else None
    return basis, times, doc.get("meta")


def dmd_to_doc(model: DmdModel, meta=None):
    doc = {
        "version": 1,
        "kind": "dmd",
        "lift": list(model.lift.names),
        "mean": _pack(model.mean),
        "n_dof": int(model.n_dof),
        "atilde": _pack(model.atilde),
        "basis": _pack(model.basis),
        "eigenvalues": _pack_complex(model.eigenvalues),
        "modes": _pack_complex(model.modes),
        "amplitudes": _pack_complex(model.amplitudes),
        "last_amplitudes": _pack_complex(model.last_amplitudes),
        "fit_residual": float(model.fit_residual),
        "singular_values": _pack(model.singular_values),
    }
    if meta:
        doc["meta"] = meta
    return doc


def dmd_from_doc(doc) -> DmdModel:
    if doc.get("kind") != "dmd":
        raise FormatError(f"expected a dmd artifact, got {doc.get('kind')!r}")
    return DmdModel(
        LiftSpec(tuple(doc["lift"])), _unpack(doc["mean"]), int(doc["n_dof"]),
        _unpack(doc["atilde"]), _unpack(doc["basis"]), _unpack_complex(doc["eigenvalues"]),
        _unpack_complex(doc["modes"]), _unpack_complex(doc["amplitudes"]),
        _unpack_complex(doc["last_amplitudes"]), float(doc["fit_residual"]),
        _unpack(doc["singular_values"]),
    )


def write_json(path, doc):
    Path(path).write_text(_dumps(doc), encoding="utf-8")


def read_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}", offset=exc.pos) from exc


# ---------------------------------------------------------------- checkpoints


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to rebuild a trained model and roll it out.

    ``seed_window`` is in raw coefficient units; ``scaler_mean`` and
    ``scaler_scale`` map raw to normalized coefficients.
    """

    config: TrainConfig
    parameters: dict
    scaler_mean: np.ndarray
    scaler_scale: np.ndarray
    seed_window: np.ndarray
    t_start: float = 0.0
    dt: float = 1.0
    pod_basis: dict | None = None
    version: int = CHECKPOINT_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def task(self):
        return self.config.task

    @classmethod
    def from_model(cls, model: LatentODE, config: TrainConfig, scaler, seed_window, t_start=0.0, dt=1.0, pod_basis=None):
        params = {k: np.array(v) for k, v in model.net_.named_parameters().items()}
        pod = None
        if pod_basis is not None:
            pod = {"mean": np.asarray(pod_basis.mean), "modes": np.asarray(pod_basis.modes)}
        return cls(
            config, params, np.asarray(scaler.mean_, dtype=float), np.asarray(scaler.scale_, dtype=float),
            np.asarray(seed_window, dtype=float), float(t_start), float(dt), pod,
        )

    def build_model(self) -> LatentODE:
        est = LatentODE.from_config(self.config)
        est.net_ = est._build(self.config.r)
        est.net_.load_parameters(self.parameters)
        est.seq_out_ = self.config.seq_out
        est.n_features_in_ = self.config.r
        return est

    def normalize(self, coeffs):
        return (np.asarray(coeffs, dtype=float) - self.scaler_mean) / self.scaler_scale

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.scaler_scale + self.scaler_mean

    def to_doc(self):
        cfg = self.config
        params = self.parameters
        doc = {
            "version": self.version,
            "task": cfg.task,
            "model_kind": cfg.model,
            "arch": {
                "layers": cfg.layers,
                "widths": {
                    "r": cfg.r, "latent": cfg.latent, "hidden": cfg.hidden,
                    "enc_hidden": cfg.enc_hidden, "dec_hidden": cfg.dec_hidden, "dec_layers": cfg.dec_layers,
                },
                "activation": "tanh",
            },
        }
        if cfg.model in ("hbnode", "ghbnode"):
            doc["gamma_params"] = {"omega": float(params["ode.omega"]), "epsilon": float(cfg.epsilon)}
        if cfg.model == "ghbnode":
            doc["xi_param"] = {"chi": float(params["ode.chi"])}
        doc["config"] = cfg.to_dict()
        doc["parameters"] = {k: _pack(v) for k, v in params.items()}
        doc["normalization"] = {"mean": _floats(self.scaler_mean), "scale": _floats(self.scaler_scale)}
        doc["seed_window"] = _pack(self.seed_window)
        doc["forecast"] = {"t_start": float(self.t_start), "dt": float(self.dt)}
        if self.pod_basis is not None:
            doc["pod_basis"] = {k: _pack(v) for k, v in self.pod_basis.items()}
        if self.extra:
            doc["extra"] = self.extra
        return doc

    @classmethod
    def from_doc(cls, doc):
        try:
            if doc["version"] != CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version {doc['version']}")
            cfg = TrainConfig.from_dict(doc["config"])
            if doc["task"] != cfg.task or doc["model_kind"] != cfg.model:
                raise FormatError("checkpoint header disagrees with its config")
            params = {k: _unpack(v, k) for k, v in doc["parameters"].items()}
            pod = None
            if "pod_basis" in doc:
                pod = {k: _unpack(v, k) for k, v in doc["pod_basis"].items()}
            return cls(
                cfg, params, np.array(doc["normalization"]["mean"], dtype=float),
                np.array(doc["normalization"]["scale"], dtype=float), _unpack(doc["seed_window"]),
                float(doc["forecast"]["t_start"]), float(doc["forecast"]["dt"]), pod,
                int(doc["version"]), doc.get("extra", {}),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed checkpoint: missing {exc}") from exc

    def dumps(self):
        return _dumps(self.to_doc())

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_doc(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint JSON: {exc.msg}", offset=exc.pos) from exc

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- metrics


def _fmt(v, col):
    if col in _INT_COLUMNS:
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(METRICS_HEADER)
    for rec in records:
        w.writerow([_fmt(getattr(rec, c), c) for c in METRICS_HEADER])
    return buf.getvalue()


def metrics_from_csv(text) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise FormatError("metrics header does not match the expected columns", offset=0)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_HEADER):
            raise FormatError(f"line {i}: expected {len(METRICS_HEADER)} columns, got {len(row)}")
        vals = {}
        for col, cell in zip(METRICS_HEADER, row):
            try:
                vals[col] = int(cell) if col in _INT_COLUMNS else float(cell)
            except ValueError as exc:
                raise FormatError(f"line {i}: column {col} is not numeric") from exc
        out.append(EpochRecord(**vals))
    return out


def write_metrics(path, records):
    Path(path).write_bytes(metrics_to_csv(records).encode("utf-8"))


def read_metrics(path):
    return metrics_from_csv(Path(path).read_bytes().decode("utf-8"))
