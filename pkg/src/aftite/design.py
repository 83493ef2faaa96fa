"""Model specifications and design matrices with treatment interactions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import DataError, RankDeficientError
from .ingest import COVARIATES, AnalysisDataset

__all__ = ["ModelSpec", "DesignMatrix", "preset_spec", "build_design", "PRESETS",
           "TREATMENT", "INTERCEPT"]

INTERCEPT = "(Intercept)"
TREATMENT = "rx"
PRESETS = ("model1", "model2a", "model2b")


@dataclass(frozen=True)
class ModelSpec:
    """Main effects plus the subset of them that interact with treatment."""

    main_effects: tuple[str, ...]
    interactions: tuple[str, ...] = ()
    include_treatment: bool = True
    preset: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "main_effects", tuple(self.main_effects))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        for label, names in (("main effect", self.main_effects), ("interaction", self.interactions)):
            seen = set()
            for name in names:
                if name in seen:
                    raise DataError(f"duplicate {label} {name!r}")
                seen.add(name)
        orphans = [n for n in self.interactions if n not in self.main_effects]
        if orphans:
            raise DataError(f"interaction without main effect: {', '.join(orphans)}")
        if self.interactions and not self.include_treatment:
            raise DataError("interactions require include_treatment=True")
        reserved = {INTERCEPT, TREATMENT} & set(self.main_effects)
        if reserved:
            raise DataError(f"reserved column name(s) used as covariates: {reserved}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "main_effects": list(self.main_effects),
            "interactions": list(self.interactions),
            "include_treatment": self.include_treatment,
            "preset": self.preset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        return cls(
            main_effects=tuple(d["main_effects"]),
            interactions=tuple(d.get("interactions", ())),
            include_treatment=bool(d.get("include_treatment", True)),
            preset=str(d.get("preset", "custom")),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        """Short stable hash used in output metadata."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def column_layout(self) -> list[tuple[str, str, str | None]]:
        """(name, role, parent covariate) for every regression column."""
        cols: list[tuple[str, str, str | None]] = [(INTERCEPT, "intercept", None)]
        cols += [(name, "covariate", name) for name in self.main_effects]
        if self.include_treatment:
            cols.append((TREATMENT, "treatment", None))
        cols += [(f"{TREATMENT}:{name}", "interaction", name) for name in self.interactions]
        return cols


def preset_spec(tag: str) -> ModelSpec:
    """Model 1 (no interactions), 2A (age and logsz) or 2B (all covariates)."""
    if tag == "model1":
        return ModelSpec(COVARIATES, (), True, "model1")
    if tag == "model2a":
        return ModelSpec(COVARIATES, ("age", "logsz"), True, "model2a")
    if tag == "model2b":
        return ModelSpec(COVARIATES, COVARIATES, True, "model2b")
    raise DataError(f"unknown preset {tag!r}; expected one of {', '.join(PRESETS)}")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    columns: tuple[tuple[str, str], ...]
    values: np.ndarray
    parents: tuple[str | None, ...]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [c[0] for c in self.columns]

    @property
    def roles(self) -> list[str]:
        return [c[1] for c in self.columns]


def build_design(data: AnalysisDataset, spec: ModelSpec, check_rank: bool = True) -> DesignMatrix:
    """Columns: intercept, main effects, treatment, then ``rx:<name>`` products."""
    unknown = [n for n in spec.main_effects if n not in data.names]
    if unknown:
        raise DataError(f"unknown covariate(s) {', '.join(unknown)}; dataset has {', '.join(data.names)}")
    layout = spec.column_layout()
    z = data.z.astype(float)
    cols = []
    for name, role, parent in layout:
        if role == "intercept":
            cols.append(np.ones(data.n))
        elif role == "covariate":
            cols.append(data.column(parent))
        elif role == "treatment":
            cols.append(z)
        else:
            cols.append(z * data.column(parent))
    values = np.column_stack(cols)
    values.setflags(write=False)
    if check_rank:
        rank = np.linalg.matrix_rank(values)
        if rank < values.shape[1]:
            raise RankDeficientError(f"design matrix has rank {rank} < {values.shape[1]} columns")
    return DesignMatrix(
        columns=tuple((name, role) for name, role, _ in layout),
        values=values,
        parents=tuple(parent for _, _, parent in layout),
    )
