"""Binary and CSV persistence for single (unbatched) spectral states.

Binary layout, all little endian::

    magic  5 bytes   b"IMLB1"
    kind   uint8     0 scalar, 1 vector, 2 shell
    d      uint8     torus dimension (0 for shells)
    k      uint8     components per mode (1 scalar/shell, d vector)
    N      uint32    eigenvalue cutoff, or shell count
    k0     float64   shell base wavenumber (0 for torus)
    lam    float64   shell ratio (0 for torus)
    data   float64   (re, im) pairs, modes in storage order, components inner
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .spectral import SpectralField, shell_basis, torus_basis

MAGIC = b"IMLB1"
HEADER = struct.Struct("<5sBBBIdd")
KIND_TAGS = {"scalar": 0, "vector": 1, "shell": 2}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class SnapshotFormatError(ValueError):
    pass


def _mode_major(u: SpectralField) -> np.ndarray:
    if u.kind == "vector":
        return u.coeffs.T  # (nmodes, d)
    return u.coeffs[:, None]


def to_bytes(u: SpectralField) -> bytes:
    if u.batch_shape:
        raise ValueError("snapshots hold a single state; index the batch first")
    if u.kind == "shell":
        head = HEADER.pack(MAGIC, 2, 0, 1, u.basis.n, u.basis.k0, u.basis.lam)
    else:
        k = u.basis.d if u.kind == "vector" else 1
        head = HEADER.pack(MAGIC, KIND_TAGS[u.kind], u.basis.d, k, u.basis.N, 0.0, 0.0)
    data = _mode_major(u)
    pairs = np.stack([data.real, data.imag], axis=-1).astype("<f8")
    return head + pairs.tobytes()


def from_bytes(buf: bytes) -> SpectralField:
    if len(buf) < HEADER.size:
        raise SnapshotFormatError("truncated header")
    magic, tag, d, k, N, k0, lam = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if tag not in TAG_KINDS:
        raise SnapshotFormatError(f"unknown kind tag {tag}")
    kind = TAG_KINDS[tag]
    raw = np.frombuffer(buf, dtype="<f8", offset=HEADER.size)
    z = raw[0::2] + 1j * raw[1::2]
    if kind == "shell":
        basis = shell_basis(N, k0, lam)
        if z.size != N:
            raise SnapshotFormatError("payload size does not match shell count")
        return SpectralField("shell", basis, z)
    basis = torus_basis(d, N)
    if z.size != basis.nmodes * k:
        raise SnapshotFormatError("payload size does not match mode set")
    z = z.reshape(basis.nmodes, k)
    coeffs = z.T.copy() if kind == "vector" else z[:, 0].copy()
    return SpectralField(kind, basis, coeffs)


def save(u: SpectralField, path) -> None:
    Path(path).write_bytes(to_bytes(u))


def load(path) -> SpectralField:
    return from_bytes(Path(path).read_bytes())


def to_csv(u: SpectralField) -> str:
    """CSV rows ``mode..., component, re, im`` in storage order."""
    if u.batch_shape:
        raise ValueError("CSV export holds a single state")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    data = _mode_major(u)
    if u.kind == "shell":
        w.writerow(["n", "component", "re", "im"])
        labels = [(n,) for n in range(1, u.basis.n + 1)]
    else:
        w.writerow([f"m{i + 1}" for i in range(u.basis.d)] + ["component", "re", "im"])
        labels = [tuple(m) for m in u.basis.modes.tolist()]
    for lab, row in zip(labels, data):
        for comp, z in enumerate(row):
            w.writerow(list(lab) + [comp, repr(float(z.real)), repr(float(z.imag))])
    return buf.getvalue()
