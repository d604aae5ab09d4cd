"""
Target schema: which census counts a household selection is fitted to, and
how a microdata household contributes to each of them.
"""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "default_schema.yaml")

HOUSEHOLD_FEATURES = {
    "size", "family", "couple", "married", "n_workers", "n_children",
    "has_own_children", "own_children_under6", "own_children_6to17",
    "has_relatives", "has_nonrelatives", "income", "snap",
    "householder_race", "householder_age", "sex",
}
PERSON_FEATURES = HOUSEHOLD_FEATURES | {
    "age", "race_ethnicity", "relationship", "industry", "grade",
    "is_worker", "employed", "arrangement",
}
RELATIVE_ROLES = {"spouse", "child", "grandchild", "relative"}


class SchemaError(ValueError):
    """Raised for a malformed schema definition."""
    pass


def household_features(members: Sequence, income: Optional[float], snap: bool) -> Dict[str, Any]:
    """
    Household-level features used by ``unit: household`` columns.

    Args:
        members: PersonAttrs of the household (householder first, if present)
        income: household annual income in dollars
        snap: SNAP receipt flag

    Returns:
        dict of feature name -> value
    """
    householder = next((m for m in members if m.relationship == "householder"), members[0])
    roles = [m.relationship for m in members]
    own_children = [m for m in members if m.relationship == "child" and m.age is not None and m.age < 18]
    return {
        "size": len(members),
        "family": any(r in RELATIVE_ROLES for r in roles),
        "couple": "spouse" in roles or "partner" in roles,
        "married": "spouse" in roles,
        "n_workers": sum(1 for m in members if m.is_worker),
        "n_children": sum(1 for m in members if m.age is not None and m.age < 18),
        "has_own_children": bool(own_children),
        "own_children_under6": sum(1 for m in own_children if m.age < 6),
        "own_children_6to17": sum(1 for m in own_children if m.age >= 6),
        "has_relatives": any(r in ("grandchild", "relative") for r in roles),
        "has_nonrelatives": "nonrelative" in roles,
        "income": income,
        "snap": bool(snap),
        "householder_race": householder.race_ethnicity,
        "householder_age": householder.age,
        "sex": householder.sex,
    }


def _arrangement(person, hh: Mapping[str, Any]) -> str:
    """Living arrangement of one member (adults in the default schema)."""
    if hh["size"] == 1:
        return "alone"
    rel = person.relationship
    if rel in ("spouse", "partner") or (rel == "householder" and hh["couple"]):
        return "with_partner"
    if rel == "child":
        return "with_parent"
    if rel in ("grandchild", "relative"):
        return "with_relatives"
    if rel == "householder":
        return "with_relatives" if (hh["has_relatives"] or hh["has_own_children"] or hh["family"]) else "with_nonrelatives"
    return "with_nonrelatives"


def person_features(person, hh: Mapping[str, Any]) -> Dict[str, Any]:
    """Person-level features; household features are visible too."""
    feats = dict(hh)
    feats.update({
        "age": person.age,
        "sex": person.sex,
        "race_ethnicity": person.race_ethnicity,
        "relationship": person.relationship,
        "industry": person.industry,
        "grade": person.grade,
        "is_worker": bool(person.is_worker),
        "employed": person.industry is not None,
        "arrangement": _arrangement(person, hh),
    })
    return feats


def _matches(where: Mapping[str, Any], feats: Mapping[str, Any]) -> bool:
    for key, cond in where.items():
        value = feats[key]
        if isinstance(cond, dict):
            if value is None:
                return False
            lo, hi = cond.get("min"), cond.get("max")
            if lo is not None and value < lo:
                return False
            if hi is not None and value > hi:
                return False
        elif isinstance(cond, list):
            if value not in cond:
                return False
        elif value != cond:
            return False
    return True


@dataclass(frozen=True)
class TargetColumn:
    """One schema column: a counting predicate plus the raw census columns it sums."""
    name: str
    unit: str
    where: Mapping[str, Any] = field(default_factory=dict)
    raw: Tuple[str, ...] = ()
    optimize: bool = True
    role: Optional[str] = None
    group: str = ""

    def count(self, hh: Mapping[str, Any], persons: Sequence[Mapping[str, Any]]) -> int:
        if self.unit == "household":
            return int(_matches(self.where, hh))
        return sum(1 for p in persons if _matches(self.where, p))

    def restricted(self, **extra) -> "TargetColumn":
        """Copy of the column with extra equality conditions (used for sex splits)."""
        where = dict(self.where)
        where.update(extra)
        return replace(self, where=where)

    @property
    def industry(self) -> Optional[str]:
        if self.role == "industry":
            return self.where.get("industry")
        return None


class TargetSchema:
    """
    Ordered target columns. ``width`` counts only the optimized columns;
    off-target columns (``optimize: false``) ride along for fit evaluation.
    """
    def __init__(self, columns: List[TargetColumn]):
        if not columns:
            raise SchemaError("schema needs at least one column")
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate schema column names: {dup}")
        self.columns = list(columns)
        self.optimized_index = np.array([i for i, c in enumerate(columns) if c.optimize], dtype=np.int64)
        self.offtarget_index = np.array([i for i, c in enumerate(columns) if not c.optimize], dtype=np.int64)
        if len(self.optimized_index) == 0:
            raise SchemaError("schema needs at least one optimized column")

    @property
    def width(self) -> int:
        return len(self.optimized_index)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def raw_columns(self) -> List[str]:
        seen = []
        for c in self.columns:
            for r in c.raw:
                if r not in seen:
                    seen.append(r)
        return seen

    def industry_columns(self) -> Dict[str, int]:
        """Map industry code -> column index for ``role: industry`` columns."""
        return {c.industry: i for i, c in enumerate(self.columns) if c.industry}

    def evaluate(self, members: Sequence, income: Optional[float], snap: bool) -> np.ndarray:
        """
        Household contribution vector over all columns (optimized and off-target).

        Returns:
            np.ndarray of int64, length len(columns)
        """
        hh = household_features(members, income, snap)
        persons = [person_features(m, hh) for m in members]
        return np.array([c.count(hh, persons) for c in self.columns], dtype=np.int64)

    def restrict(self, names: Sequence[str], offtarget: Sequence[str] = ()) -> "TargetSchema":
        """Narrower schema: ``names`` optimized, ``offtarget`` evaluated only."""
        by_name = {c.name: c for c in self.columns}
        missing = [n for n in list(names) + list(offtarget) if n not in by_name]
        if missing:
            raise SchemaError(f"unknown schema columns: {missing}")
        cols = [replace(by_name[n], optimize=True) for n in names]
        cols += [replace(by_name[n], optimize=False) for n in offtarget]
        return TargetSchema(cols)

    def to_records(self) -> List[Dict[str, Any]]:
        records = []
        for c in self.columns:
            rec = {"name": c.name, "unit": c.unit, "where": dict(c.where), "raw": list(c.raw)}
            if not c.optimize:
                rec["optimize"] = False
            if c.role:
                rec["role"] = c.role
            if c.group:
                rec["group"] = c.group
            records.append(rec)
        return records

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump({"columns": self.to_records()}, f, sort_keys=False)


def _column_from_record(rec: Mapping[str, Any], group: str = "") -> TargetColumn:
    if "name" not in rec or "unit" not in rec:
        raise SchemaError(f"schema column needs 'name' and 'unit': {rec}")
    name = str(rec["name"])
    unit = rec["unit"]
    if unit not in ("household", "person"):
        raise SchemaError(f"{name}: unit must be 'household' or 'person', got {unit!r}")
    where = dict(rec.get("where") or {})
    allowed = HOUSEHOLD_FEATURES if unit == "household" else PERSON_FEATURES
    for key in where:
        if key not in allowed:
            raise SchemaError(f"{name}: unknown {unit} feature {key!r}")
    if "raw" in rec:
        raw = tuple(str(r) for r in rec["raw"])
    elif rec.get("split_by") == "sex":
        raw = (f"{name}_male", f"{name}_female")
    elif rec.get("split_by"):
        raise SchemaError(f"{name}: only split_by: sex is supported")
    else:
        raw = (name,)
    role = rec.get("role")
    if role not in (None, "industry"):
        raise SchemaError(f"{name}: unknown role {role!r}")
    if role == "industry" and "industry" not in where:
        raise SchemaError(f"{name}: industry columns need where.industry")
    return TargetColumn(
        name=name, unit=unit, where=where, raw=raw,
        optimize=bool(rec.get("optimize", True)), role=role,
        group=str(rec.get("group", group)),
    )


def load_schema(path: Optional[str] = None) -> TargetSchema:
    """
    Load a target schema YAML file.

    The file holds either ``columns: [...]`` or ``groups: {group: [...]}``.

    Args:
        path: schema file; None loads the packaged 85-column default

    Returns:
        TargetSchema
    """
    path = path or DEFAULT_SCHEMA_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise SchemaError(f"cannot read schema {path}: {e}") from e
    columns = []
    for rec in data.get("columns", []):
        columns.append(_column_from_record(rec))
    for group, recs in (data.get("groups") or {}).items():
        for rec in recs:
            columns.append(_column_from_record(rec, group=group))
    logger.debug("Loaded schema %s with %d columns", path, len(columns))
    return TargetSchema(columns)
