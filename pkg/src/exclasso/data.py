"""Synthetic instances and on-disk formats.

File formats
------------
dense CSV matrix
    One row of ``A`` per line, comma separated, ``.`` decimal point.
CSV vector
    One value per line (used for ``b``, ``c`` and weights).
LibSVM
    ``<label> <index>:<value> ...`` per row with 1-based feature indices; the
    labels become ``b`` and the rows are densified into ``A``.
groups file
    One group per line, 1-based feature indices separated by spaces or commas.
manifest
    JSON object naming the parts (paths relative to the manifest) plus
    ``lambda`` and ``loss``; see :func:`save_instance`.

Floats are written with 17 significant digits so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import GroupPartition, LossKind, ProblemInstance

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FLOAT_FMT = "%.17g"


class DataFormatError(ValueError):
    """A data file could not be parsed."""

    def __init__(self, path: Path | str, line: int | None, reason: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the correlated-Gaussian synthetic design.

    ``n = l * p`` features in ``l`` contiguous groups; columns are correlated
    with ``rho_in^|i-j|`` inside a group and ``rho_out^|i-j|`` across groups.
    """

    m: int
    l: int
    p: int
    seed: int = 0
    loss: LossKind | str = LossKind.LEAST_SQUARES
    rho_in: float = 0.9
    rho_out: float = 0.3
    nnz_per_group: int = 10
    signal_low: float = 0.0
    signal_high: float = 10.0

    def __post_init__(self):
        for name in ("m", "l", "p"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be a positive integer")
        if self.nnz_per_group > self.p:
            raise ValueError("nnz_per_group cannot exceed the group size p")
        object.__setattr__(self, "loss", LossKind.parse(self.loss))

    @property
    def n(self) -> int:
        return self.l * self.p


def synthetic_covariance(l: int, p: int, rho_in: float = 0.9, rho_out: float = 0.3) -> NDArray:
    """Block Toeplitz covariance over ``l`` contiguous groups of size ``p``.

    ``|i - j|`` is the global index distance for both the in-group and the
    cross-group entries.
    """
    n = l * p
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :])
    group = idx // p
    same = group[:, None] == group[None, :]
    return np.where(same, rho_in**dist, rho_out**dist)


def _covariance_factor(sigma: NDArray) -> NDArray:
    """Return ``F`` with ``F F^T = sigma``, clipping eigenvalues if needed."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(sigma)
        logger.warning(
            "covariance is not positive definite (min eigenvalue %.3e); clipping at 1e-10",
            vals.min(),
        )
        return vecs * np.sqrt(np.clip(vals, 1e-10, None))


def gen_synthetic(spec: SyntheticSpec) -> tuple[ProblemInstance, NDArray[np.float64]]:
    """Generate ``(instance, x_star)`` with ``b = A x_star + noise``.

    Randomness comes from ``numpy.random.Generator(PCG64(seed))``. For the
    logistic loss the labels are ``+1`` where ``A x_star + noise >= 0``.
    The instance carries ``lam = 1``; rescale it with ``with_lambda``.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n
    factor = _covariance_factor(synthetic_covariance(spec.l, spec.p, spec.rho_in, spec.rho_out))
    A = rng.standard_normal((spec.m, n)) @ factor.T
    x_star = np.zeros(n)
    for j in range(spec.l):
        pos = rng.choice(spec.p, size=spec.nnz_per_group, replace=False)
        x_star[j * spec.p + pos] = rng.uniform(spec.signal_low, spec.signal_high,
                                               size=spec.nnz_per_group)
    noise = rng.standard_normal(spec.m)
    response = A @ x_star + noise
    if spec.loss is LossKind.LOGISTIC:
        b = np.where(response >= 0, 1.0, -1.0)
    else:
        b = response
    part = GroupPartition.contiguous(spec.l, spec.p)
    return ProblemInstance(A, b, 1.0, part, spec.loss), x_star


def lambda_from_fraction(A: ArrayLike, b: ArrayLike, lambda_b: float) -> float:
    """``lam = lambda_b * ||A^T b||_inf``."""
    if not lambda_b > 0:
        raise ValueError("lambda_b must be positive")
    scale = float(np.abs(np.asarray(A).T @ np.asarray(b)).max())
    if scale == 0.0:
        raise ValueError("A^T b is zero; lambda cannot be set relative to it")
    return lambda_b * scale


def log_grid(high: float, low: float, num: int) -> NDArray[np.float64]:
    """``num`` log-spaced values from ``high`` down to ``low``."""
    if not (high > 0 and low > 0 and num >= 1):
        raise ValueError("grid bounds must be positive and num >= 1")
    return np.geomspace(high, low, num)


# ---------------------------------------------------------------- readers

_SPLIT = re.compile(r"[,\s]+")


def _parse_float(tok: str, path, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise DataFormatError(path, lineno, f"not a number: {tok!r}") from None


def read_csv_matrix(path: Path | str) -> NDArray[np.float64]:
    path = Path(path)
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = [_parse_float(t.strip(), path, lineno) for t in line.split(",")]
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(path, lineno, f"expected {width} columns, found {len(row)}")
            rows.append(row)
    if not rows:
        raise DataFormatError(path, None, "no data rows")
    return np.array(rows, dtype=np.float64)


def read_vector(path: Path | str) -> NDArray[np.float64]:
    path = Path(path)
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            toks = [t for t in _SPLIT.split(line) if t]
            if len(toks) != 1:
                raise DataFormatError(path, lineno, "expected exactly one value per line")
            vals.append(_parse_float(toks[0], path, lineno))
    return np.array(vals, dtype=np.float64)


def read_libsvm(path: Path | str, n_features: int | None = None) -> tuple[NDArray, NDArray]:
    """Read a LibSVM file into a dense matrix and a label vector."""
    path = Path(path)
    labels: list[float] = []
    entries: list[tuple[int, int, float]] = []
    max_idx = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            row = len(labels)
            labels.append(_parse_float(toks[0], path, lineno))
            for tok in toks[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise DataFormatError(path, lineno, f"expected index:value, found {tok!r}")
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise DataFormatError(path, lineno, f"bad feature index {idx_s!r}") from None
                if idx < 1:
                    raise DataFormatError(path, lineno, f"feature indices are 1-based, found {idx}")
                entries.append((row, idx - 1, _parse_float(val_s, path, lineno)))
                max_idx = max(max_idx, idx)
    n = max_idx if n_features is None else int(n_features)
    if max_idx > n:
        raise DataFormatError(path, None, f"feature index {max_idx} exceeds n_features={n}")
    A = np.zeros((len(labels), n))
    for r, cidx, v in entries:
        A[r, cidx] = v
    return A, np.array(labels)


def read_groups(path: Path | str, n_features: int | None = None) -> GroupPartition:
    """Read a groups file (one group per line, 1-based indices)."""
    path = Path(path)
    groups = []
    seen: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            grp = []
            for tok in (t for t in _SPLIT.split(line) if t):
                try:
                    idx = int(tok)
                except ValueError:
                    raise DataFormatError(path, lineno, f"bad index {tok!r}") from None
                if idx < 1:
                    raise DataFormatError(path, lineno, f"indices are 1-based, found {idx}")
                if n_features is not None and idx > n_features:
                    raise DataFormatError(path, lineno, f"index {idx} exceeds n_features={n_features}")
                if idx in seen:
                    raise DataFormatError(
                        path, lineno, f"index {idx} already used on line {seen[idx]}"
                    )
                seen[idx] = lineno
                grp.append(idx - 1)
            groups.append(grp)
    if not groups:
        raise DataFormatError(path, None, "no groups")
    n = max(seen) if n_features is None else int(n_features)
    missing = sorted(set(range(1, n + 1)) - set(seen))
    if missing:
        raise DataFormatError(path, None, f"index {missing[0]} is not covered by any group")
    return GroupPartition(groups, n_features=n)


# ---------------------------------------------------------------- writers

def write_csv_matrix(path: Path | str, A: ArrayLike) -> None:
    np.savetxt(path, np.atleast_2d(A), fmt=FLOAT_FMT, delimiter=",")


def write_vector(path: Path | str, v: ArrayLike) -> None:
    np.savetxt(path, np.asarray(v, dtype=np.float64).ravel(), fmt=FLOAT_FMT)


def write_libsvm(path: Path | str, A: ArrayLike, b: ArrayLike) -> None:
    A = np.asarray(A)
    with open(path, "w", encoding="utf-8") as fh:
        for row, label in zip(A, np.asarray(b).ravel()):
            nz = np.flatnonzero(row)
            feats = " ".join(f"{i + 1}:{FLOAT_FMT % row[i]}" for i in nz)
            fh.write(f"{FLOAT_FMT % label} {feats}".rstrip() + "\n")


def write_groups(path: Path | str, partition: GroupPartition) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in partition.groups:
            fh.write(" ".join(str(int(i) + 1) for i in g) + "\n")


def save_instance(
    inst: ProblemInstance, manifest: Path | str, fmt: str = "csv", extra: dict | None = None
) -> Path:
    """Write an instance next to a JSON manifest and return the manifest path.

    ``fmt`` is ``"csv"`` (dense matrix + vector files) or ``"libsvm"``.
    """
    manifest = Path(manifest)
    root = manifest.parent
    root.mkdir(parents=True, exist_ok=True)
    stem = manifest.stem
    parts = {"groups": f"{stem}.groups.txt", "weights": f"{stem}.weights.csv",
             "c": f"{stem}.c.csv"}
    if fmt == "csv":
        parts["A"] = f"{stem}.A.csv"
        parts["b"] = f"{stem}.b.csv"
        write_csv_matrix(root / parts["A"], inst.A)
        write_vector(root / parts["b"], inst.b)
    elif fmt == "libsvm":
        parts["A"] = f"{stem}.libsvm"
        write_libsvm(root / parts["A"], inst.A, inst.b)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    write_groups(root / parts["groups"], inst.partition)
    write_vector(root / parts["weights"], inst.weights)
    write_vector(root / parts["c"], inst.c)
    doc = {
        "format_version": MANIFEST_VERSION,
        "format": fmt,
        "m": inst.shape[0],
        "n": inst.shape[1],
        "lambda": inst.lam,
        "loss": inst.loss.value,
        "files": parts,
    }
    if extra:
        doc["extra"] = extra
    manifest.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_manifest(manifest: Path | str) -> dict:
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(manifest, exc.lineno, f"invalid JSON: {exc.msg}") from None
    for key in ("format", "n", "lambda", "loss", "files"):
        if key not in doc:
            raise DataFormatError(manifest, None, f"missing key {key!r}")
    return doc


def load_instance(manifest: Path | str, lam: float | None = None) -> ProblemInstance:
    """Load an instance written by :func:`save_instance` (or by hand, same schema)."""
    manifest = Path(manifest)
    doc = load_manifest(manifest)
    root = manifest.parent
    files = doc["files"]
    n = int(doc["n"])
    if doc["format"] == "csv":
        A = read_csv_matrix(root / files["A"])
        b = read_vector(root / files["b"])
    elif doc["format"] == "libsvm":
        A, b = read_libsvm(root / files["A"], n_features=n)
    else:
        raise DataFormatError(manifest, None, f"unknown format {doc['format']!r}")
    if A.shape[1] != n:
        raise DataFormatError(root / files["A"], None, f"matrix has {A.shape[1]} columns, manifest says {n}")
    part = read_groups(root / files["groups"], n_features=n)
    w = read_vector(root / files["weights"]) if files.get("weights") else None
    c = read_vector(root / files["c"]) if files.get("c") else None
    return ProblemInstance(A, b, float(doc["lambda"]) if lam is None else lam, part,
                           LossKind.parse(doc["loss"]), c, w)
