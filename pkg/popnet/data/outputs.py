"""
Writers and readers for pipeline output files.
"""
import logging
import os
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from popnet.config.settings import GRADE_LABELS
from popnet.data.inputs import InputDataError, PersonAttrs, parse_grade
from popnet.services.placement import Place, Population

logger = logging.getLogger(__name__)

PEOPLE_COLUMNS = [
    "person_id", "home_cbg", "household_id", "gq_id", "age", "sex", "race_eth", "income",
    "industry", "grade", "is_worker", "school_id", "workplace_id", "work_cbg", "placeholder_flag",
]
PLACE_COLUMNS = [
    "place_id", "kind", "cbg", "capacity", "size", "low_grade", "high_grade", "n_teachers",
    "industry", "gq_type",
]
NETWORK_INDEX_COLUMNS = ["name", "n_vertices", "n_edges", "path"]


def _grade_label(g: Optional[int]) -> str:
    return "" if g is None else GRADE_LABELS[int(g)]


def people_frame(pop: Population) -> pd.DataFrame:
    rows = []
    for p in pop.persons:
        a = p.attrs
        rows.append({
            "person_id": p.person_id,
            "home_cbg": p.home_cbg,
            "household_id": p.household_id or "",
            "gq_id": p.gq_id or "",
            "age": "" if a.age is None else int(a.age),
            "sex": a.sex or "",
            "race_eth": a.race_ethnicity or "",
            "income": "" if a.income is None else a.income,
            "industry": a.industry or "",
            "grade": _grade_label(a.grade),
            "is_worker": int(bool(a.is_worker)),
            "school_id": p.school_id or "",
            "workplace_id": p.workplace_id or "",
            "work_cbg": p.work_cbg or "",
            "placeholder_flag": int(p.placeholder),
        })
    return pd.DataFrame(rows, columns=PEOPLE_COLUMNS)


def places_frame(pop: Population) -> pd.DataFrame:
    rows = []
    for place in pop.places.values():
        rows.append({
            "place_id": place.place_id,
            "kind": place.kind,
            "cbg": place.cbg,
            "capacity": place.capacity,
            "size": place.size,
            "low_grade": _grade_label(place.low_grade),
            "high_grade": _grade_label(place.high_grade),
            "n_teachers": place.n_teachers,
            "industry": place.industry or "",
            "gq_type": place.gq_type or "",
        })
    df = pd.DataFrame(rows, columns=PLACE_COLUMNS)
    return df.sort_values(["kind", "place_id"]).reset_index(drop=True)


def write_population(pop: Population, out_dir: str):
    pop.refresh_sizes()
    people_frame(pop).to_csv(os.path.join(out_dir, "people.csv"), index=False)
    places_frame(pop).to_csv(os.path.join(out_dir, "places.csv"), index=False)
    logger.info("Wrote %d people and %d places to %s", len(pop.persons), len(pop.places), out_dir)


def _read(path: str, columns: List[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InputDataError(f"missing file: {os.path.basename(path)} (looked in {os.path.dirname(path)})")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise InputDataError(f"{os.path.basename(path)}: missing columns {missing}")
    return df


def read_people(path: str) -> pd.DataFrame:
    """people.csv with typed columns; blanks become None/NaN, sorted by person_id."""
    df = _read(path, PEOPLE_COLUMNS)
    out = df.copy()
    out["person_id"] = df["person_id"].astype(np.int64)
    out["age"] = pd.to_numeric(df["age"].replace("", np.nan))
    out["income"] = pd.to_numeric(df["income"].replace("", np.nan))
    out["is_worker"] = df["is_worker"].astype(int).astype(bool)
    out["placeholder_flag"] = df["placeholder_flag"].astype(int).astype(bool)
    for col in ("household_id", "gq_id", "sex", "race_eth", "industry", "grade", "school_id",
                "workplace_id", "work_cbg"):
        out[col] = df[col].map(lambda v: v or None)
    out = out.sort_values("person_id").reset_index(drop=True)
    if not np.array_equal(out["person_id"].to_numpy(), np.arange(len(out))):
        raise InputDataError("people.csv: person ids must be 0..n-1")
    return out


def read_places(path: str) -> pd.DataFrame:
    df = _read(path, PLACE_COLUMNS)
    for col in ("capacity", "size", "n_teachers"):
        df[col] = df[col].astype(np.int64)
    return df


def population_from_frames(people: pd.DataFrame, places: pd.DataFrame) -> Population:
    """Rebuild a Population from people.csv / places.csv frames."""
    pop = Population()

    def _opt(v):
        return None if v is None or (isinstance(v, float) and np.isnan(v)) else v

    for r in people.itertuples(index=False):
        age = _opt(r.age)
        income = _opt(r.income)
        attrs = PersonAttrs(
            age=None if age is None else int(age),
            sex=r.sex, race_ethnicity=r.race_eth, industry=r.industry,
            income=None if income is None else float(income),
            grade=parse_grade(r.grade or "", "people.csv, column grade"),
            is_worker=bool(r.is_worker),
            relationship="",
        )
        pop.add_person(r.home_cbg, attrs, household_id=r.household_id, gq_id=r.gq_id,
                       placeholder=bool(r.placeholder_flag), school_id=r.school_id,
                       workplace_id=r.workplace_id, work_cbg=r.work_cbg)
    for r in places.itertuples(index=False):
        pop.add_place(Place(
            place_id=r.place_id, kind=r.kind, cbg=r.cbg, capacity=int(r.capacity), size=int(r.size),
            low_grade=parse_grade(r.low_grade, "places.csv, column low_grade"),
            high_grade=parse_grade(r.high_grade, "places.csv, column high_grade"),
            n_teachers=int(r.n_teachers), industry=r.industry or None, gq_type=r.gq_type or None,
        ))
    return pop


def write_frame(df: pd.DataFrame, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    df.to_csv(path, index=False)
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def write_network_index(entries: Iterable[Dict[str, object]], out_dir: str) -> str:
    """Append/replace rows of networks.csv, keyed by network name."""
    path = os.path.join(out_dir, "networks.csv")
    new = pd.DataFrame(list(entries), columns=NETWORK_INDEX_COLUMNS)
    if os.path.exists(path):
        old = pd.read_csv(path, dtype={"name": str, "path": str})
        new = pd.concat([old[~old["name"].isin(new["name"])], new], ignore_index=True)
    new.sort_values("name").to_csv(path, index=False)
    return path


def read_network_index(out_dir: str) -> pd.DataFrame:
    path = os.path.join(out_dir, "networks.csv")
    if not os.path.exists(path):
        raise InputDataError(f"missing file: networks.csv (looked in {out_dir}); run the network command first")
    return pd.read_csv(path, dtype={"name": str, "path": str})
