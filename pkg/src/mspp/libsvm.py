"""Reader and writer for LIBSVM sparse text files (``label idx:val idx:val ...``)."""

from __future__ import annotations

import os

import numpy as np

from .core import Minibatch


class LibSVMFormatError(ValueError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def parse_libsvm(path: str | os.PathLike, binary: bool = True,
                 n_features: int | None = None) -> tuple[Minibatch, int]:
    """Read a LIBSVM file into a dense minibatch.

    Indices are 1-based and must strictly increase within a line; absent
    features are zero and ``p`` is the largest index seen. With ``binary``
    the labels are mapped to {-1, +1}: positive labels to +1, others to -1,
    except that a {1, 2} label set (covtype.binary) maps 1 -> +1, 2 -> -1.
    ``n_features`` widens the feature matrix beyond the largest index seen.

    Returns
    -------
    data : Minibatch
    p : int
    """
    labels, rows = [], []
    p = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            # trailing comments are allowed by the format
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise LibSVMFormatError(f"non-numeric label {tokens[0]!r}", lineno) from None
            idx, vals = [], []
            last = 0
            for tok in tokens[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise LibSVMFormatError(f"expected idx:val, got {tok!r}", lineno)
                try:
                    j = int(key)
                    v = float(val)
                except ValueError:
                    raise LibSVMFormatError(f"non-numeric token {tok!r}", lineno) from None
                if j < 1:
                    raise LibSVMFormatError(f"index {j} is not 1-based", lineno)
                if j <= last:
                    raise LibSVMFormatError(f"index {j} does not increase past {last}", lineno)
                last = j
                idx.append(j - 1)
                vals.append(v)
            p = max(p, last)
            labels.append(label)
            rows.append((idx, vals))
    if not rows:
        raise LibSVMFormatError("no samples", 0)
    X = np.zeros((len(rows), max(p, n_features or 0, 1)))
    for i, (idx, vals) in enumerate(rows):
        X[i, idx] = vals
    y = np.array(labels)
    if binary:
        if set(np.unique(y)) <= {1.0, 2.0}:
            y = np.where(y == 1.0, 1.0, -1.0)
        else:
            y = np.where(y > 0, 1.0, -1.0)
    return Minibatch(X, y), p


def write_libsvm(path: str | os.PathLike, data: Minibatch) -> None:
    """Write nonzero features with shortest round-trip float formatting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y in zip(data.X, data.y):
            feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in enumerate(x) if v != 0)
            fh.write(f"{float(y)!r} {feats}".rstrip() + "\n")
