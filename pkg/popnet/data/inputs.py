"""
Region input files: readers, validation and the in-memory types they produce.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from popnet.config.settings import (
    GRADE_CODES, INDUSTRIES, INDUSTRY_INDEX, OUTSIDE,
)
from popnet.data.schema import SchemaError, TargetSchema, load_schema

logger = logging.getLogger(__name__)

REQUIRED_FILES = {
    "cbg_marginals.csv": ["cbg", "households", "hh_population", "total_adults",
                          "household_adults", "total_gq", "gq_65plus"],
    "pums_households.csv": ["hh_id", "puma", "income", "snap"],
    "pums_persons.csv": ["hh_id", "person_num", "age", "sex", "race_eth",
                         "relationship", "industry", "grade", "is_worker"],
    "od.csv": ["home_cbg", "work_cbg", "count"],
    "wac.csv": ["work_cbg", "industry", "count"],
    "cbp.csv": ["county", "bin_min", "bin_max", "count"],
    "schools.csv": ["school_id", "x", "y", "low_grade", "high_grade", "n_students",
                    "n_teachers", "active", "regular"],
    "geo.csv": ["cbg", "x", "y", "puma", "county", "cbsa", "urban_pct"],
}
RELATIONSHIPS = {"householder", "spouse", "partner", "child", "grandchild", "relative", "nonrelative"}


class InputDataError(Exception):
    """Custom exception for unusable region input data."""
    pass


@dataclass(frozen=True)
class PersonAttrs:
    """Microdata attributes of one person (household income is repeated per member)."""
    age: Optional[int]
    sex: Optional[str]
    race_ethnicity: Optional[str]
    industry: Optional[str]
    income: Optional[float]
    grade: Optional[int]
    is_worker: bool
    relationship: str = "householder"


@dataclass(frozen=True)
class MicroHousehold:
    """A sampled household with its members and its contribution to every schema column."""
    id: str
    puma: str
    members: Tuple[PersonAttrs, ...]
    income: Optional[float]
    snap: bool
    contribution: np.ndarray = field(compare=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class RegionInputs:
    """All parsed inputs for one synthesis region."""
    cbg_table: pd.DataFrame
    households: List[MicroHousehold]
    od: pd.DataFrame
    wac: pd.DataFrame
    cbp: pd.DataFrame
    schools: pd.DataFrame
    geo: pd.DataFrame
    schema: TargetSchema
    gq_industry: Dict[str, float]
    puma_urban: Dict[str, float]
    contributions: np.ndarray = field(repr=False, default=None)
    by_puma: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.contributions is None:
            width = len(self.schema.columns)
            if self.households:
                self.contributions = np.vstack([h.contribution for h in self.households])
            else:
                self.contributions = np.zeros((0, width), dtype=np.int64)
        if not self.by_puma:
            groups: Dict[str, List[int]] = {}
            for i, h in enumerate(self.households):
                groups.setdefault(h.puma, []).append(i)
            self.by_puma = {p: np.array(ix, dtype=np.int64) for p, ix in groups.items()}

    @property
    def cbgs(self) -> List[str]:
        return sorted(self.cbg_table.index)

    @property
    def counties(self) -> Set[str]:
        return set(self.geo["county"])

    @property
    def cbg_county(self) -> Dict[str, str]:
        return self.geo["county"].to_dict()


def _read_csv(input_dir: str, name: str, required: Sequence[str], optional: bool = False) -> Optional[pd.DataFrame]:
    path = os.path.join(input_dir, name)
    if not os.path.exists(path):
        if optional:
            return None
        raise InputDataError(f"missing input file: {name} (looked in {input_dir})")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputDataError(f"{name}: cannot parse CSV: {e}") from e
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InputDataError(f"{name}: missing columns {missing}")
    for c in df.columns:
        df[c] = df[c].str.strip()
    return df


def _numeric(df: pd.DataFrame, name: str, column: str, kind=float, allow_blank: bool = False,
             non_negative: bool = True) -> pd.Series:
    """Convert one column, reporting the first bad row as file/line/column."""
    values = []
    for i, raw in enumerate(df[column].tolist()):
        if raw == "":
            if allow_blank:
                values.append(np.nan)
                continue
            raise InputDataError(f"{name}, line {i + 2}, column {column}: empty value")
        try:
            v = kind(float(raw)) if kind is int else float(raw)
        except ValueError:
            raise InputDataError(f"{name}, line {i + 2}, column {column}: cannot parse {raw!r}") from None
        if non_negative and v < 0:
            raise InputDataError(f"{name}, line {i + 2}, column {column}: negative count {raw}")
        values.append(v)
    return pd.Series(values, index=df.index, dtype=float)


def parse_grade(raw: str, where: str = "") -> Optional[int]:
    """Map PK/KG/1..12 to -1..12; blank is no grade."""
    if raw == "" or raw is None:
        return None
    key = str(raw).upper()
    if key.endswith(".0"):
        key = key[:-2]
    if key not in GRADE_CODES:
        raise InputDataError(f"{where}: unknown grade {raw!r}")
    return GRADE_CODES[key]


def _flag(raw: str, where: str) -> bool:
    if raw in ("1", "true", "True", "TRUE", "yes"):
        return True
    if raw in ("0", "false", "False", "FALSE", "no", ""):
        return False
    raise InputDataError(f"{where}: expected a 0/1 flag, got {raw!r}")


def _read_geo(input_dir: str) -> pd.DataFrame:
    name = "geo.csv"
    df = _read_csv(input_dir, name, REQUIRED_FILES[name])
    for col in ("x", "y"):
        df[col] = _numeric(df, name, col, non_negative=False)
    df["urban_pct"] = _numeric(df, name, "urban_pct")
    if "tract" not in df.columns:
        df["tract"] = df["cbg"].str[:11]
    if df["cbg"].duplicated().any():
        dup = df.loc[df["cbg"].duplicated(), "cbg"].iloc[0]
        raise InputDataError(f"{name}: duplicate cbg {dup}")
    return df.set_index("cbg", drop=False).sort_index()


def _read_cbg_table(input_dir: str, geo: pd.DataFrame) -> pd.DataFrame:
    name = "cbg_marginals.csv"
    df = _read_csv(input_dir, name, REQUIRED_FILES[name])
    for col in df.columns:
        if col != "cbg":
            df[col] = _numeric(df, name, col)
    unknown = sorted(set(df["cbg"]) - set(geo.index))
    if unknown:
        raise InputDataError(f"{name}: CBG {unknown[0]} has no row in geo.csv")
    return df.set_index("cbg").sort_index()


def _read_pums(input_dir: str, schema: TargetSchema) -> List[MicroHousehold]:
    hh_name, p_name = "pums_households.csv", "pums_persons.csv"
    hh = _read_csv(input_dir, hh_name, REQUIRED_FILES[hh_name])
    persons = _read_csv(input_dir, p_name, REQUIRED_FILES[p_name])
    hh["income"] = _numeric(hh, hh_name, "income", allow_blank=True, non_negative=False)

    members: Dict[str, List[Tuple[int, PersonAttrs]]] = {}
    income_by_hh = dict(zip(hh["hh_id"], hh["income"]))
    for i, row in enumerate(persons.itertuples(index=False)):
        where = f"{p_name}, line {i + 2}"
        if row.hh_id not in income_by_hh:
            raise InputDataError(f"{where}, column hh_id: unknown household {row.hh_id}")
        industry = row.industry or None
        if industry is not None and industry not in INDUSTRY_INDEX:
            raise InputDataError(f"{where}, column industry: unknown industry {industry!r}")
        relationship = row.relationship or "householder"
        if relationship not in RELATIONSHIPS:
            raise InputDataError(f"{where}, column relationship: unknown value {relationship!r}")
        try:
            age = int(float(row.age)) if row.age != "" else None
            num = int(float(row.person_num))
        except ValueError:
            raise InputDataError(f"{where}, column age/person_num: not a number") from None
        income = income_by_hh[row.hh_id]
        attrs = PersonAttrs(
            age=age,
            sex=row.sex or None,
            race_ethnicity=row.race_eth or None,
            industry=industry,
            income=None if np.isnan(income) else float(income),
            grade=parse_grade(row.grade, f"{where}, column grade"),
            is_worker=_flag(row.is_worker, f"{where}, column is_worker"),
            relationship=relationship,
        )
        members.setdefault(row.hh_id, []).append((num, attrs))

    households = []
    for i, row in enumerate(hh.itertuples(index=False)):
        if row.hh_id not in members:
            logger.warning("%s line %d: household %s has no persons, skipped", hh_name, i + 2, row.hh_id)
            continue
        ordered = tuple(a for _, a in sorted(members[row.hh_id], key=lambda t: t[0]))
        income = None if np.isnan(row.income) else float(row.income)
        snap = _flag(row.snap, f"{hh_name}, line {i + 2}, column snap")
        households.append(MicroHousehold(
            id=row.hh_id, puma=row.puma, members=ordered, income=income, snap=snap,
            contribution=schema.evaluate(ordered, income, snap),
        ))
    households.sort(key=lambda h: h.id)
    return households


def _relabel_cbgs(df: pd.DataFrame, name: str, columns: Sequence[str], geo: pd.DataFrame) -> pd.DataFrame:
    """
    Map out-of-region ids to OUTSIDE; ids sharing the state+county prefix
    of a region CBG but unknown to geo.csv are dangling references.
    """
    known = set(geo.index)
    prefixes = {c[:5] for c in geo.index}
    for col in columns:
        values = df[col].tolist()
        for i, v in enumerate(values):
            if v == OUTSIDE or v in known:
                continue
            if v[:5] in prefixes:
                raise InputDataError(f"{name}, line {i + 2}, column {col}: dangling CBG reference {v}")
            values[i] = OUTSIDE
        df[col] = values
    return df


def _read_optional_props(input_dir: str, name: str, key: str, value: str) -> Optional[Dict[str, float]]:
    df = _read_csv(input_dir, name, [key, value], optional=True)
    if df is None:
        return None
    df[value] = _numeric(df, name, value)
    return dict(zip(df[key], df[value].astype(float)))


def default_gq_industry(households: Sequence[MicroHousehold]) -> Dict[str, float]:
    """Industry shares among 18-64 household members, scaled by their employment rate."""
    counts = np.zeros(len(INDUSTRIES))
    adults = 0
    for h in households:
        for m in h.members:
            if m.age is not None and 18 <= m.age <= 64:
                adults += 1
                if m.industry is not None:
                    counts[INDUSTRY_INDEX[m.industry]] += 1
    if adults == 0:
        return {ind: 0.0 for ind in INDUSTRIES}
    return {ind: counts[i] / adults for i, ind in enumerate(INDUSTRIES)}


def load_region_inputs(input_dir: str, schema_path: Optional[str] = None) -> RegionInputs:
    """
    Load and validate every region input file.

    Args:
        input_dir: directory holding the CSV files listed in REQUIRED_FILES
        schema_path: target schema; default is ``target_schema.yaml`` in
            input_dir if present, else the packaged schema

    Returns:
        RegionInputs
    """
    if not os.path.isdir(input_dir):
        raise InputDataError(f"input directory {input_dir} does not exist")
    for name in REQUIRED_FILES:
        if not os.path.exists(os.path.join(input_dir, name)):
            raise InputDataError(f"missing input file: {name} (looked in {input_dir})")

    if schema_path is None:
        local = os.path.join(input_dir, "target_schema.yaml")
        schema_path = local if os.path.exists(local) else None
    try:
        schema = load_schema(schema_path)
    except SchemaError as e:
        raise InputDataError(f"target schema: {e}") from e

    geo = _read_geo(input_dir)
    cbg_table = _read_cbg_table(input_dir, geo)
    households = _read_pums(input_dir, schema)

    name = "od.csv"
    od = _read_csv(input_dir, name, REQUIRED_FILES[name])
    od["count"] = _numeric(od, name, "count")
    od = _relabel_cbgs(od, name, ["home_cbg", "work_cbg"], geo)
    od = od.groupby(["home_cbg", "work_cbg"], as_index=False)["count"].sum()

    name = "wac.csv"
    wac = _read_csv(input_dir, name, REQUIRED_FILES[name])
    wac["count"] = _numeric(wac, name, "count")
    bad = sorted(set(wac["industry"]) - set(INDUSTRIES))
    if bad:
        raise InputDataError(f"{name}: unknown industry {bad[0]!r}")
    wac = _relabel_cbgs(wac, name, ["work_cbg"], geo)
    wac = wac[wac["work_cbg"] != OUTSIDE]
    wac = wac.groupby(["work_cbg", "industry"], as_index=False)["count"].sum()

    name = "cbp.csv"
    cbp = _read_csv(input_dir, name, REQUIRED_FILES[name])
    cbp["bin_min"] = _numeric(cbp, name, "bin_min")
    cbp["bin_max"] = _numeric(cbp, name, "bin_max", allow_blank=True)
    cbp["count"] = _numeric(cbp, name, "count")
    unfitted = sorted(set(geo["county"]) - set(cbp["county"]))
    if unfitted:
        logger.warning("%s: no rows for counties %s; their workplaces use region-level sizes",
                       name, ", ".join(unfitted))

    name = "schools.csv"
    schools = _read_csv(input_dir, name, REQUIRED_FILES[name])
    for col in ("x", "y"):
        schools[col] = _numeric(schools, name, col, non_negative=False)
    for col in ("n_students", "n_teachers"):
        schools[col] = _numeric(schools, name, col, allow_blank=True)
    schools["active"] = [_flag(v, f"{name}, line {i + 2}, column active") for i, v in enumerate(schools["active"])]
    schools["regular"] = [_flag(v, f"{name}, line {i + 2}, column regular") for i, v in enumerate(schools["regular"])]
    lows, highs = [], []
    for i, (lo, hi) in enumerate(zip(schools["low_grade"], schools["high_grade"])):
        g_lo = parse_grade(lo, f"{name}, line {i + 2}, column low_grade")
        g_hi = parse_grade(hi, f"{name}, line {i + 2}, column high_grade")
        if g_lo is not None and g_hi is not None and g_lo > g_hi:
            raise InputDataError(f"{name}, line {i + 2}: low_grade {lo} above high_grade {hi}")
        lows.append(g_lo)
        highs.append(g_hi)
    schools["low_grade"] = pd.array(lows, dtype="Int64")
    schools["high_grade"] = pd.array(highs, dtype="Int64")
    if "school_type" not in schools.columns:
        schools["school_type"] = ""
    schools = schools.sort_values("school_id").reset_index(drop=True)

    gq_industry = _read_optional_props(input_dir, "gq_industry.csv", "industry", "proportion")
    if gq_industry is None:
        gq_industry = default_gq_industry(households)
    else:
        gq_industry = {ind: float(gq_industry.get(ind, 0.0)) for ind in INDUSTRIES}

    puma_urban = _read_optional_props(input_dir, "puma_urban.csv", "puma", "urban_pct")
    if puma_urban is None:
        puma_urban = geo.groupby("puma")["urban_pct"].mean().to_dict()
        puma_urban.pop("", None)

    region = RegionInputs(
        cbg_table=cbg_table, households=households, od=od, wac=wac, cbp=cbp,
        schools=schools, geo=geo, schema=schema, gq_industry=gq_industry,
        puma_urban=puma_urban,
    )
    logger.info("Loaded region from %s: %d CBGs, %d microdata households, %d schools",
                input_dir, len(cbg_table), len(households), len(schools))
    return region
