"""Model container: a JSON manifest plus one binary array file per class.

Array file layout (``class_NNN.bin``), repeated for each array in the order
the manifest lists them::

    int64 LE rows, int64 LE cols, rows*cols float64 LE values (row-major)

Arrays per class: ``centers`` (K x D), ``weights`` (K x 1), ``x_tilde``
(K x D), then ``U_000`` ... ``U_{K-1}`` (D x q each).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .classify import Classifier
from .density import ClassModel, Kernel, VarianceParams
from .distortion import DistortionBasis
from .errors import IntegrityError, KDError, KDIOError, VersionError

FORMAT_NAME = "kdclassifier-model"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"

_HEADER = struct.Struct("<qq")
_ORTHO_TOL = 1e-10
_NORM_TOL = 1e-12
_WEIGHT_TOL = 1e-9


def _class_arrays(model):
    ks = model.kernels
    arrays = [
        ("centers", np.stack([k.center for k in ks])),
        ("weights", model.weights[:, None]),
        ("x_tilde", np.stack([k.basis.x_tilde for k in ks])),
    ]
    arrays += [(f"U_{i:03d}", k.basis.U) for i, k in enumerate(ks)]
    return arrays


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return _HEADER.pack(*arr.shape) + arr.tobytes()


def manifest_for(classifier, note=None):
    meta = classifier.meta
    v = classifier.models[0].variances
    classes = []
    for m, model in enumerate(classifier.models):
        classes.append(
            {
                "index": m,
                "file": f"class_{m:03d}.bin",
                "kernel_count": len(model.kernels),
                "kernel_sample_ids": [int(i) for i in model.sample_ids],
                "arrays": [
                    {"name": name, "rows": int(a.shape[0]), "cols": int(a.shape[1])}
                    for name, a in _class_arrays(model)
                ],
            }
        )
    doc = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "class_count": classifier.class_count,
        "dimension": classifier.dimension,
        "width": classifier.width,
        "height": classifier.height,
        "q": classifier.models[0].q,
        "p": meta.get("p"),
        "step": meta.get("step"),
        "seed": meta.get("seed"),
        "dataset_fingerprint": meta.get("dataset_fingerprint"),
        "sigma_d2": v.sigma_d2,
        "sigma_o2": v.sigma_o2,
        "log_priors": [float(x) for x in classifier.log_priors],
        "classes": classes,
    }
    if note is not None:
        doc["note"] = note
    return doc


def save_model(classifier, path, note=None):
    """Write ``classifier`` into directory ``path`` (created if missing)."""
    path = Path(path)
    doc = manifest_for(classifier, note)
    try:
        path.mkdir(parents=True, exist_ok=True)
        for entry, model in zip(doc["classes"], classifier.models):
            blob = b"".join(_encode(a) for _, a in _class_arrays(model))
            (path / entry["file"]).write_bytes(blob)
        (path / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise KDIOError(f"cannot write model to {path}: {exc}") from exc


def _read_arrays(blob, specs, label):
    out, pos = {}, 0
    for spec in specs:
        if pos + _HEADER.size > len(blob):
            raise IntegrityError(f"{label}: truncated before array {spec['name']!r}")
        rows, cols = _HEADER.unpack_from(blob, pos)
        pos += _HEADER.size
        if (rows, cols) != (spec["rows"], spec["cols"]):
            raise IntegrityError(
                f"{label}: array {spec['name']!r} is {rows}x{cols}, manifest says "
                f"{spec['rows']}x{spec['cols']}"
            )
        nbytes = 8 * rows * cols
        if pos + nbytes > len(blob):
            raise IntegrityError(f"{label}: truncated inside array {spec['name']!r}")
        out[spec["name"]] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise IntegrityError(f"{label}: {len(blob) - pos} trailing bytes")
    return out


def _check_basis(U, x_tilde, label):
    q = U.shape[1]
    if np.abs(U.T @ U - np.eye(q)).max() > _ORTHO_TOL:
        raise IntegrityError(f"{label}: U columns are not orthonormal")
    if abs(np.linalg.norm(x_tilde) - 1.0) > _NORM_TOL:
        raise IntegrityError(f"{label}: x_tilde is not unit length")
    if np.abs(U.T @ x_tilde).max() > _ORTHO_TOL:
        raise IntegrityError(f"{label}: x_tilde is not orthogonal to U")


def load_model(path):
    """Read a container written by :func:`save_model` and re-validate it."""
    path = Path(path)
    try:
        doc = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except OSError as exc:
        raise KDIOError(f"cannot read model manifest in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path / MANIFEST}: not valid JSON: {exc}") from exc
    if doc.get("format") != FORMAT_NAME:
        raise IntegrityError(f"{path}: not a {FORMAT_NAME} container")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {doc.get('format_version')!r}")

    D, q = doc["dimension"], doc["q"]
    variances = VarianceParams(doc["sigma_d2"], doc["sigma_o2"])
    models = []
    for entry in doc["classes"]:
        label = f"class {entry['index']}"
        K = entry["kernel_count"]
        expected = [("centers", K, D), ("weights", K, 1), ("x_tilde", K, D)]
        expected += [(f"U_{i:03d}", D, q) for i in range(K)]
        if [(a["name"], a["rows"], a["cols"]) for a in entry["arrays"]] != expected:
            raise IntegrityError(f"{label}: manifest array list inconsistent with K={K}, D={D}, q={q}")
        try:
            blob = (path / entry["file"]).read_bytes()
        except OSError as exc:
            raise KDIOError(f"{label}: cannot read {entry['file']}: {exc}") from exc
        arrays = _read_arrays(blob, entry["arrays"], label)
        weights = arrays["weights"][:, 0]
        if (weights < 0).any() or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise IntegrityError(f"{label}: kernel weights do not sum to 1")
        kernels = []
        for k in range(K):
            U = arrays[f"U_{k:03d}"]
            x_tilde = arrays["x_tilde"][k]
            center = arrays["centers"][k]
            _check_basis(U, x_tilde, f"{label} kernel {k}")
            basis = DistortionBasis(U, x_tilde, center)
            kernels.append(Kernel(center, basis, float(weights[k]), entry["kernel_sample_ids"][k]))
        try:
            models.append(ClassModel(entry["index"], tuple(kernels), variances))
        except KDError as exc:
            raise IntegrityError(f"{label}: {exc}") from exc

    meta = {key: doc.get(key) for key in ("p", "step", "seed", "dataset_fingerprint")}
    try:
        return Classifier(tuple(models), np.array(doc["log_priors"]), doc["width"], doc["height"], meta)
    except KDError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc
