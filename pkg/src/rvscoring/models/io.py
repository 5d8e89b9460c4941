"""Delimited-text storage of longitudinal datasets, one row per measurement.

Columns are ``subject_id,t,X,y,censored``.  Floats are written with 17
significant digits so a read reproduces the arrays bit for bit.  The
censoring threshold goes in a leading ``# threshold = ...`` comment.
"""
import csv
import io
from itertools import groupby

import numpy as np

from ..errors import ConfigurationError
from .longitudinal import LongitudinalDataset, Subject

__all__ = ["COLUMNS", "write_dataset", "read_dataset", "dataset_to_text", "dataset_from_text"]

COLUMNS = ("subject_id", "t", "X", "y", "censored")


def _g17(v):
    return "%.17g" % v


def dataset_to_text(dataset):
    buf = io.StringIO()
    buf.write(f"# threshold = {_g17(dataset.threshold)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for sid, s in enumerate(dataset.subjects):
        for t, y, c in zip(s.times, s.y, s.censored):
            w.writerow((sid, _g17(t), _g17(s.x), _g17(y), int(c)))
    return buf.getvalue()


def dataset_from_text(text, threshold=None):
    """Parse :func:`dataset_to_text` output.

    Without a threshold comment and without ``threshold`` the threshold is
    taken from the censored rows, which store it as their response.
    """
    lines = text.splitlines()
    comment_threshold = None
    body = []
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            key, _, value = stripped.lstrip("#").partition("=")
            if key.strip() == "threshold" and value.strip():
                comment_threshold = float(value)
        elif stripped:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or tuple(h.strip() for h in rows[0]) != COLUMNS:
        raise ConfigurationError(f"dataset header must be {','.join(COLUMNS)}")
    try:
        parsed = [(r[0].strip(), float(r[1]), float(r[2]), float(r[3]), int(r[4])) for r in rows[1:]]
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"malformed dataset row: {exc}") from exc
    subjects = []
    for _, group in groupby(parsed, key=lambda r: r[0]):
        g = list(group)
        xs = {r[2] for r in g}
        if len(xs) != 1:
            raise ConfigurationError("covariate X must be constant within a subject")
        subjects.append(Subject(np.array([r[1] for r in g]), xs.pop(),
                                np.array([r[3] for r in g]), np.array([r[4] == 1 for r in g])))
    if threshold is None:
        threshold = comment_threshold
    if threshold is None:
        cens = [r[3] for r in parsed if r[4] == 1]
        if not cens:
            raise ConfigurationError("no censored rows; pass the threshold explicitly")
        threshold = max(cens)
    return LongitudinalDataset(subjects, float(threshold))


def write_dataset(dataset, path):
    with open(path, "w", newline="") as fh:
        fh.write(dataset_to_text(dataset))


def read_dataset(path, threshold=None):
    with open(path, newline="") as fh:
        return dataset_from_text(fh.read(), threshold)
