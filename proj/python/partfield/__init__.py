"""Part feature fields on triplanes: fitting, querying and hierarchical segmentation."""

from __future__ import annotations

import json
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ._core import (
    AnalysisError,
    ClusteringError,
    Field,
    FieldError,
    FitError,
    GeometryError,
    ProposalError,
    SamplerError,
    cosegment,
    dumbbell,
    kmeans,
    load_mesh,
    miou,
    nn_correspondence,
    similarity,
)
from . import _core

__all__ = [
    "AnalysisError",
    "ClusteringError",
    "Field",
    "FieldError",
    "FitError",
    "GeometryError",
    "ProposalError",
    "SamplerError",
    "cosegment",
    "dumbbell",
    "fit",
    "kmeans",
    "load_mesh",
    "miou",
    "nn_correspondence",
    "segment",
    "similarity",
]


def fit(
    vertices: np.ndarray,
    faces: np.ndarray,
    face_labels: np.ndarray,
    config: Optional[Mapping[str, Any]] = None,
    points: int = 100_000,
) -> tuple[Field, dict]:
    """Fit a field to a mesh supervised by per-face part labels.

    ``config`` uses the same keys as the command line tool's JSON config;
    absent keys keep their defaults. Returns the field and the fit report.
    """
    field, report = _core.fit(vertices, faces, face_labels, json.dumps(dict(config or {})), points)
    return field, json.loads(report)


def segment(features: np.ndarray, faces: np.ndarray, ks: Optional[Sequence[int]] = None) -> list[np.ndarray]:
    """Cut the merge tree of per-face features at each k (2..21 by default)."""
    return _core.segment(features, faces, list(ks or []))
