"""Lossless, checksummed serialization of models and quantile surfaces.

Files are canonical JSON (sorted keys, compact separators, trailing newline)
with float64 arrays encoded as base64 little-endian bytes, so a write, read,
write cycle is byte-identical.  Every file embeds a format tag, a version,
and a SHA-256 checksum of its canonical payload; loads verify all three.
"""

import base64
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .cvqf import DiscreteCVQF, QuantileGrid, make_grid
from .embedding import EmbeddingSpec
from .errors import ArtifactError
from .solver import DualSolution

FORMAT_VERSION = 1
_MODEL_TAG = "vqreg-model"
_CVQF_TAG = "vqreg-cvqf"


def _encode_array(a: np.ndarray | None):
    if a is None:
        return None
    a = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(obj):
    if obj is None:
        return None
    raw = base64.b64decode(obj["data"].encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write(path, tag: str, payload: dict) -> None:
    body = _canonical(payload)
    envelope = {
        "format": tag,
        "version": FORMAT_VERSION,
        "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_canonical(envelope) + "\n")


def _read(path, tag: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            envelope = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"{path}: not a valid artifact file ({exc})") from None
    if not isinstance(envelope, dict) or envelope.get("format") != tag:
        raise ArtifactError(f"{path}: expected a {tag} file")
    if envelope.get("version") != FORMAT_VERSION:
        raise ArtifactError(
            f"{path}: format version {envelope.get('version')} is not "
            f"supported (expected {FORMAT_VERSION})"
        )
    payload = envelope.get("payload")
    digest = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if digest != envelope.get("sha256"):
        raise ArtifactError(f"{path}: checksum mismatch, file is corrupt")
    return payload


@dataclass(frozen=True)
class ModelArtifact:
    """A fitted solution with its grid and optional embedding spec."""

    solution: DualSolution
    grid: QuantileGrid
    embedding_spec: EmbeddingSpec | None
    config_fingerprint: str


def config_fingerprint(config_dict: dict) -> str:
    return hashlib.sha256(_canonical(config_dict).encode("utf-8")).hexdigest()


def save_model(path, solution: DualSolution, grid: QuantileGrid,
               embedding_spec: EmbeddingSpec | None = None,
               fingerprint: str = "") -> None:
    payload = {
        "T": grid.T,
        "d": grid.d,
        "psi": _encode_array(solution.psi),
        "beta": _encode_array(solution.beta),
        "phi": _encode_array(solution.phi),
        "epsilon": solution.epsilon,
        "embedding_params": _encode_array(solution.embedding_params),
        "embedding_spec": asdict(embedding_spec) if embedding_spec else None,
        "config_fingerprint": fingerprint,
    }
    _write(path, _MODEL_TAG, payload)


def load_model(path) -> ModelArtifact:
    p = _read(path, _MODEL_TAG)
    spec = None
    if p.get("embedding_spec") is not None:
        s = dict(p["embedding_spec"])
        s["hidden_sizes"] = tuple(s.get("hidden_sizes", ()))
        spec = EmbeddingSpec(**s)
    solution = DualSolution(
        psi=_decode_array(p["psi"]),
        beta=_decode_array(p["beta"]),
        phi=_decode_array(p["phi"]),
        epsilon=p["epsilon"],
        embedding_params=_decode_array(p.get("embedding_params")),
    )
    return ModelArtifact(
        solution=solution,
        grid=make_grid(p["T"], p["d"]),
        embedding_spec=spec,
        config_fingerprint=p.get("config_fingerprint", ""),
    )


def save_cvqf(path, cvqf: DiscreteCVQF) -> None:
    payload = {
        "T": cvqf.grid.T,
        "d": cvqf.grid.d,
        "values": _encode_array(cvqf.values),
        "x": _encode_array(cvqf.x),
    }
    _write(path, _CVQF_TAG, payload)


def load_cvqf(path) -> DiscreteCVQF:
    p = _read(path, _CVQF_TAG)
    return DiscreteCVQF(
        grid=make_grid(p["T"], p["d"]),
        values=_decode_array(p["values"]),
        x=_decode_array(p.get("x")),
    )
