"""
Desk-scale fixture generator.

Fabricates a ground-truth population for a small region and writes every
pipeline input file from it, so synthesis results can be checked against
known answers. Truth files go to a sibling ``truth/`` directory and are
never read by the pipeline.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from popnet.config.settings import (
    GQ_BANDS, GQ_KINDS, GQ_TYPES, GRADE_LABELS, INDUSTRIES, P43_TYPE_CODES,
    STAFF_INDUSTRY, TEACHER_INDUSTRY, ConfigError,
)
from popnet.data.inputs import PersonAttrs
from popnet.data.schema import TargetSchema, household_features, load_schema, person_features
from popnet.services.apportion import largest_remainder
from popnet.services.streams import stream

logger = logging.getLogger(__name__)

RACES = ["white_nh", "black", "hispanic", "asian", "other"]
HOUSEHOLD_TYPES = ["alone", "married_kids", "married_nokids", "single_parent", "partner",
                   "roommates", "multigen", "grandparent"]
_TYPE_WEIGHTS = np.array([0.27, 0.20, 0.20, 0.10, 0.06, 0.07, 0.06, 0.04])
SCHOOL_LEVELS = [("elementary", -1, 5), ("middle", 6, 8), ("high", 9, 12)]
CBP_BINS = [(1, 4), (5, 9), (10, 19), (20, 49), (50, 99), (100, 249), (250, None)]
FOREIGN_CBGS = ["510590001001", "510130002002", "110010003001"]


@dataclass
class FixtureSpec:
    """Shape of a generated region."""
    n_cbgs: int = 50
    households_per_cbg: int = 150
    schema_width: int = 40
    n_schools: int = 15
    industries: Optional[List[str]] = None
    gq_fraction: float = 0.1
    seed: int = 7
    n_offtarget: int = 12
    cbgs_per_county: int = 10
    cbgs_per_puma: int = 5
    decoy_fraction: float = 0.5
    outside_share: float = 0.08

    def __post_init__(self):
        if self.industries is None:
            self.industries = list(INDUSTRIES)

    def validate(self, full_width: int):
        for name in ("n_cbgs", "households_per_cbg", "schema_width", "n_schools", "cbgs_per_county",
                     "cbgs_per_puma"):
            if getattr(self, name) < 1:
                raise ConfigError(f"fixture.{name} must be positive, got {getattr(self, name)}")
        if self.schema_width + self.n_offtarget > full_width:
            raise ConfigError(f"fixture.schema_width + n_offtarget must be <= {full_width}")
        if not 0.0 <= self.gq_fraction <= 1.0:
            raise ConfigError("fixture.gq_fraction must be in [0, 1]")
        unknown = sorted(set(self.industries) - set(INDUSTRIES))
        if unknown:
            raise ConfigError(f"fixture.industries: unknown industry {unknown[0]!r}")
        for needed in (TEACHER_INDUSTRY, STAFF_INDUSTRY):
            if needed not in self.industries:
                raise ConfigError(f"fixture.industries must include {needed}")


@dataclass
class TruthHousehold:
    hh_id: str
    cbg: str
    puma: str
    members: Tuple[PersonAttrs, ...]
    income: float
    snap: bool


@dataclass
class _CbgProfile:
    """Per-CBG generator parameters."""
    type_mix: np.ndarray
    race_mix: np.ndarray
    industry_mix: np.ndarray
    income_shift: float


@dataclass
class FixtureTruth:
    """What the generator knows and the pipeline must rediscover."""
    households: List[TruthHousehold] = field(default_factory=list)
    gq: List[Dict[str, object]] = field(default_factory=list)
    gq_workers: Dict[str, np.ndarray] = field(default_factory=dict)


def _grade_for_age(age: int) -> Optional[int]:
    if age == 4:
        return -1
    if 5 <= age <= 17:
        return age - 5
    return None


def _person(rng, age: int, sex: str, race: str, relationship: str, profile: _CbgProfile,
            industries: Sequence[str]) -> PersonAttrs:
    if age >= 18:
        p_work = 0.75 if age < 65 else 0.15
    else:
        p_work = 0.0
    is_worker = bool(rng.random() < p_work)
    industry = str(rng.choice(industries, p=profile.industry_mix)) if is_worker else None
    return PersonAttrs(age=int(age), sex=sex, race_ethnicity=race, industry=industry, income=None,
                       grade=_grade_for_age(age), is_worker=is_worker, relationship=relationship)


def _sex(rng) -> str:
    return "M" if rng.random() < 0.5 else "F"


def draw_household(rng: np.random.Generator, profile: _CbgProfile,
                   industries: Sequence[str]) -> Tuple[Tuple[PersonAttrs, ...], float, bool]:
    """
    One household from the parametric generator.

    Returns:
        (members with the householder first, income, snap flag)
    """
    kind = HOUSEHOLD_TYPES[int(rng.choice(len(HOUSEHOLD_TYPES), p=profile.type_mix))]
    race = str(rng.choice(RACES, p=profile.race_mix))

    def add(age, sex, rel):
        members.append(_person(rng, age, sex, race, rel, profile, industries))

    def kids(parent_age, n):
        for _ in range(n):
            add(int(rng.integers(0, min(17, parent_age - 18) + 1)), _sex(rng), "child")

    members: List[PersonAttrs] = []
    if kind == "alone":
        add(int(rng.integers(18, 91)), _sex(rng), "householder")
    elif kind in ("married_kids", "married_nokids", "multigen"):
        young = kind != "married_nokids"
        age = int(rng.integers(25, 56)) if young else int(rng.integers(22, 86))
        sex = _sex(rng)
        add(age, sex, "householder")
        add(max(18, age + int(rng.integers(-4, 5))), "F" if sex == "M" else "M", "spouse")
        if young:
            kids(age, int(rng.integers(1, 5)))
        if kind == "multigen":
            add(int(rng.integers(max(age + 18, 60), 96)), _sex(rng), "relative")
            if rng.random() < 0.3:
                add(int(rng.integers(0, 6)), _sex(rng), "grandchild")
    elif kind == "single_parent":
        age = int(rng.integers(20, 56))
        add(age, "F" if rng.random() < 0.75 else "M", "householder")
        kids(age, int(rng.integers(1, 4)))
    elif kind == "partner":
        age = int(rng.integers(20, 66))
        add(age, _sex(rng), "householder")
        add(max(18, age + int(rng.integers(-6, 7))), _sex(rng), "partner")
        if rng.random() < 0.3 and age >= 20:
            kids(age, int(rng.integers(1, 3)))
    elif kind == "roommates":
        add(int(rng.integers(18, 41)), _sex(rng), "householder")
        for _ in range(int(rng.integers(1, 4))):
            add(int(rng.integers(18, 41)), _sex(rng), "nonrelative")
    else:  # grandparent
        add(int(rng.integers(50, 81)), _sex(rng), "householder")
        for _ in range(int(rng.integers(1, 3))):
            add(int(rng.integers(0, 18)), _sex(rng), "grandchild")

    n_workers = sum(1 for m in members if m.is_worker)
    income = float(round(math.exp(rng.normal(10.1 + profile.income_shift, 0.6)) * (1.0 + 0.9 * n_workers)))
    snap = bool(income < 30000 and rng.random() < 0.5)
    members = [PersonAttrs(age=m.age, sex=m.sex, race_ethnicity=m.race_ethnicity, industry=m.industry,
                           income=income, grade=m.grade, is_worker=m.is_worker, relationship=m.relationship)
               for m in members]
    return tuple(members), income, snap


def raw_census_counts(schema: TargetSchema, members: Sequence[PersonAttrs], income: Optional[float],
                      snap: bool) -> Dict[str, int]:
    """
    One household's contribution to every raw census column of the schema.

    Sex-split columns count the ``_male`` / ``_female`` halves separately;
    any other column puts its whole count on its first raw name.
    """
    hh = household_features(members, income, snap)
    persons = [person_features(m, hh) for m in members]
    out: Dict[str, int] = {}
    for col in schema.columns:
        if len(col.raw) == 2 and col.raw[0].endswith("_male") and col.raw[1].endswith("_female"):
            out[col.raw[0]] = out.get(col.raw[0], 0) + col.restricted(sex="M").count(hh, persons)
            out[col.raw[1]] = out.get(col.raw[1], 0) + col.restricted(sex="F").count(hh, persons)
        else:
            for extra in col.raw[1:]:
                out.setdefault(extra, 0)
            out[col.raw[0]] = out.get(col.raw[0], 0) + col.count(hh, persons)
    return out


def fixture_schema(full: TargetSchema, width: int, n_offtarget: int) -> TargetSchema:
    """Evenly spaced subset of the full schema: ``width`` optimized plus ``n_offtarget`` evaluated only."""
    picks = np.unique(np.round(np.linspace(0, len(full.columns) - 1, width + n_offtarget)).astype(int))
    off_pos = set()
    if n_offtarget:
        off_pos = set(np.unique(np.round(np.linspace(1, len(picks) - 2, n_offtarget)).astype(int)).tolist())
    names = full.names
    optimized = [names[p] for i, p in enumerate(picks) if i not in off_pos]
    offtarget = [names[p] for i, p in enumerate(picks) if i in off_pos]
    return full.restrict(optimized, offtarget)


class FixtureGenerator:
    """Builds one fixture region; ``write`` lays out inputs/ and truth/."""

    def __init__(self, spec: FixtureSpec):
        self.spec = spec
        self.full_schema = load_schema()
        spec.validate(len(self.full_schema.columns))
        self.industries = [ind for ind in INDUSTRIES if ind in spec.industries]
        self.geo = self._geography()
        self.profiles = self._profiles()
        self.gq_props = self._gq_industry_props()
        self.truth = FixtureTruth()

    def _rng(self, *ids) -> np.random.Generator:
        return stream(self.spec.seed, "fixture", *ids)

    def _geography(self) -> pd.DataFrame:
        spec = self.spec
        rng = self._rng("geo")
        n_pumas = math.ceil(spec.n_cbgs / spec.cbgs_per_puma)
        puma_urban = {f"{p + 1:05d}": float(round(rng.uniform(0, 100), 1)) for p in range(n_pumas)}
        rows = []
        for i in range(spec.n_cbgs):
            c, j = divmod(i, spec.cbgs_per_county)
            county = f"24{c + 1:03d}"
            tract = f"{j // 2 + 1:04d}00"
            cbg = f"{county}{tract}{j % 2 + 1}"
            puma = f"{i // spec.cbgs_per_puma + 1:05d}"
            rows.append({
                "cbg": cbg,
                "x": round(c * 12.0 + (j % 5) * 2.0 + rng.uniform(-0.4, 0.4), 4),
                "y": round((j // 5) * 2.0 + rng.uniform(-0.4, 0.4), 4),
                "puma": puma,
                "county": county,
                "cbsa": "" if c % 3 == 2 else f"C{c // 3 + 1:03d}",
                "urban_pct": float(np.clip(puma_urban[puma] + rng.uniform(-5, 5), 0, 100).round(1)),
            })
        self.puma_urban = puma_urban
        return pd.DataFrame(rows).set_index("cbg", drop=False)

    def _profiles(self) -> Dict[str, _CbgProfile]:
        profiles = {}
        n_ind = len(self.industries)
        for cbg in self.geo.index:
            rng = self._rng("profile", cbg)
            profiles[cbg] = _CbgProfile(
                type_mix=rng.dirichlet(_TYPE_WEIGHTS * 40.0),
                race_mix=rng.dirichlet(np.array([4.0, 2.0, 2.0, 1.0, 0.5])),
                industry_mix=rng.dirichlet(np.full(n_ind, 2.0)),
                income_shift=float(rng.normal(0.0, 0.25)),
            )
        return profiles

    def _gq_industry_props(self) -> Dict[str, float]:
        chosen = [ind for ind in ("RET", "ENT_food", "SRV", "MED", "EDU") if ind in self.industries]
        if not chosen:
            chosen = self.industries[:3]
        return {ind: (0.4 / len(chosen) if ind in chosen else 0.0) for ind in self.industries}

    # -- population -------------------------------------------------------

    def _households(self):
        spec = self.spec
        for cbg in self.geo.index:
            rng = self._rng("households", cbg)
            n = max(20, int(round(spec.households_per_cbg * rng.uniform(0.8, 1.2))))
            puma = self.geo.at[cbg, "puma"]
            for k in range(n):
                members, income, snap = draw_household(rng, self.profiles[cbg], self.industries)
                self.truth.households.append(TruthHousehold(
                    hh_id="", cbg=cbg, puma=puma, members=members, income=income, snap=snap))

    def _group_quarters(self):
        spec = self.spec
        rng = self._rng("gq")
        cbgs = list(self.geo.index)
        n_gq = int(round(spec.gq_fraction * len(cbgs)))
        chosen = sorted(rng.choice(cbgs, size=n_gq, replace=False).tolist()) if n_gq else []
        props = np.array([self.gq_props.get(ind, 0.0) for ind in INDUSTRIES])
        for cbg in chosen:
            band, gq_type = GQ_KINDS[int(rng.integers(0, len(GQ_KINDS)))]
            residents = int(rng.integers(20, 81))
            self.truth.gq.append({"cbg": cbg, "band": band, "type": gq_type, "residents": residents})
            workers = np.zeros(len(INDUSTRIES), dtype=np.int64)
            if band == "18_64" and gq_type == "civilian_noninst":
                workers = largest_remainder(props, int(round(residents * props.sum())))
            elif band == "18_64" and gq_type == "military":
                workers[INDUSTRIES.index(STAFF_INDUSTRY)] = residents
            self.truth.gq_workers[cbg] = self.truth.gq_workers.get(cbg, 0) + workers

    def _pool(self) -> List[TruthHousehold]:
        """Truth households plus decoys per PUMA, shuffled and given opaque ids."""
        pool: Dict[str, List[TruthHousehold]] = {}
        for hh in self.truth.households:
            pool.setdefault(hh.puma, []).append(hh)
        out = []
        for puma in sorted(pool):
            rng = self._rng("pool", puma)
            members = pool[puma]
            cbgs = sorted({h.cbg for h in members})
            n_decoys = int(round(self.spec.decoy_fraction * len(members)))
            decoys = []
            for _ in range(n_decoys):
                base = self.profiles[cbgs[int(rng.integers(0, len(cbgs)))]]
                profile = _CbgProfile(type_mix=rng.dirichlet(_TYPE_WEIGHTS * 10.0), race_mix=base.race_mix,
                                      industry_mix=base.industry_mix, income_shift=base.income_shift + 0.3)
                m, income, snap = draw_household(rng, profile, self.industries)
                decoys.append(TruthHousehold(hh_id="", cbg="", puma=puma, members=m, income=income, snap=snap))
            combined = members + decoys
            for k, idx in enumerate(rng.permutation(len(combined))):
                combined[int(idx)].hh_id = f"P{puma}-{k:05d}"
            out.extend(combined)
        return out

    # -- marginals --------------------------------------------------------

    def marginals(self) -> pd.DataFrame:
        raw_names = self.full_schema.raw_columns
        rows = {}
        for cbg in self.geo.index:
            rows[cbg] = dict.fromkeys(raw_names, 0)
            rows[cbg].update({"households": 0, "hh_population": 0, "total_adults": 0, "household_adults": 0,
                              "total_gq": 0, "gq_65plus": 0})
            for band in GQ_BANDS:
                for gq_type in GQ_TYPES:
                    rows[cbg][f"p43_{band}_{P43_TYPE_CODES[gq_type]}"] = 0
        for hh in self.truth.households:
            r = rows[hh.cbg]
            for name, v in raw_census_counts(self.full_schema, hh.members, hh.income, hh.snap).items():
                r[name] += v
            adults = sum(1 for m in hh.members if m.age >= 18)
            r["households"] += 1
            r["hh_population"] += len(hh.members)
            r["household_adults"] += adults
            r["total_adults"] += adults
        for gq in self.truth.gq:
            r = rows[gq["cbg"]]
            n = gq["residents"]
            r["total_gq"] += n
            if gq["band"] != "under18":
                r["total_adults"] += n
            if gq["band"] == "65plus":
                r["gq_65plus"] += n
            r[f"p43_{gq['band']}_{P43_TYPE_CODES[gq['type']]}"] += n
        industry_raw = {c.industry: c.raw[0] for c in self.full_schema.columns if c.industry}
        for cbg, workers in self.truth.gq_workers.items():
            for i, ind in enumerate(INDUSTRIES):
                if workers[i] and ind in industry_raw:
                    rows[cbg][industry_raw[ind]] += int(workers[i])
        df = pd.DataFrame.from_dict(rows, orient="index")
        df.index.name = "cbg"
        return df.reset_index()

    # -- commuting, employers, schools ------------------------------------

    def _workers_by_cbg(self) -> Dict[str, List[str]]:
        """Industry of every in-region worker, by home CBG."""
        out: Dict[str, List[str]] = {cbg: [] for cbg in self.geo.index}
        for hh in self.truth.households:
            out[hh.cbg].extend(m.industry for m in hh.members if m.is_worker)
        for cbg, workers in self.truth.gq_workers.items():
            for i, ind in enumerate(INDUSTRIES):
                out[cbg].extend([ind] * int(workers[i]))
        return out

    def commutes(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """OD flows (including out-of-region ends) and WAC counts by destination and industry."""
        rng = self._rng("commute")
        cbgs = list(self.geo.index)
        xy = self.geo[["x", "y"]].to_numpy(float)
        centers = rng.random(len(cbgs)) < 0.2
        attract = np.where(centers, 5.0, 1.0)
        od: Dict[Tuple[str, str], int] = {}
        wac: Dict[Tuple[str, str], int] = {}
        for i, (cbg, industries) in enumerate(self._workers_by_cbg().items()):
            w = attract * np.exp(-np.hypot(*(xy - xy[i]).T) / 4.0)
            w = w / w.sum()
            for ind in industries:
                if rng.random() < self.spec.outside_share:
                    dest = FOREIGN_CBGS[int(rng.integers(0, len(FOREIGN_CBGS)))]
                else:
                    dest = cbgs[int(rng.choice(len(cbgs), p=w))]
                    wac[(dest, ind)] = wac.get((dest, ind), 0) + 1
                od[(cbg, dest)] = od.get((cbg, dest), 0) + 1
        region_mix = np.array([self.profiles[c].industry_mix for c in cbgs]).mean(axis=0)
        for j in np.flatnonzero(centers):
            dest = cbgs[int(j)]
            n = int(rng.integers(5, 31))
            origin = FOREIGN_CBGS[int(rng.integers(0, len(FOREIGN_CBGS)))]
            od[(origin, dest)] = od.get((origin, dest), 0) + n
            for k, c in enumerate(rng.multinomial(n, region_mix)):
                if c:
                    key = (dest, self.industries[k])
                    wac[key] = wac.get(key, 0) + int(c)
        od_df = pd.DataFrame([(h, w, c) for (h, w), c in sorted(od.items())],
                             columns=["home_cbg", "work_cbg", "count"])
        wac_df = pd.DataFrame([(d, ind, c) for (d, ind), c in sorted(wac.items())],
                              columns=["work_cbg", "industry", "count"])
        return od_df, wac_df

    def employers(self, wac: pd.DataFrame) -> pd.DataFrame:
        """CBP-style establishment counts per size bin; the last county is degenerate."""
        counties = sorted(set(self.geo["county"]))
        jobs = wac.assign(county=wac["work_cbg"].str[:5]).groupby("county")["count"].sum()
        rows = []
        for k, county in enumerate(counties):
            rng = self._rng("cbp", county)
            n_est = max(20, int(jobs.get(county, 0)) // 8)
            sizes = np.ceil(np.exp(rng.normal(1.6, 1.2, size=n_est))).astype(int)
            degenerate = len(counties) > 1 and k == len(counties) - 1
            for lo, hi in CBP_BINS:
                if degenerate:
                    count = n_est if lo == 1 else 0
                else:
                    count = int(np.count_nonzero((sizes >= lo) & ((sizes <= hi) if hi else True)))
                rows.append({"county": county, "bin_min": lo, "bin_max": "" if hi is None else hi,
                             "count": count})
        return pd.DataFrame(rows, columns=["county", "bin_min", "bin_max", "count"])

    def schools(self) -> pd.DataFrame:
        spec = self.spec
        rng = self._rng("schools")
        counties = sorted(set(self.geo["county"]))
        students: Dict[Tuple[str, str], int] = {}
        for hh in self.truth.households:
            county = hh.cbg[:5]
            for m in hh.members:
                if m.grade is None:
                    continue
                for level, lo, hi in SCHOOL_LEVELS:
                    if lo <= m.grade <= hi:
                        students[(county, level)] = students.get((county, level), 0) + 1
        layout = []
        for k in range(spec.n_schools):
            county = counties[k % len(counties)]
            level = SCHOOL_LEVELS[(k // len(counties)) % len(SCHOOL_LEVELS)]
            layout.append((k, county, level))
        per_slot: Dict[Tuple[str, str], int] = {}
        for _, county, level in layout:
            per_slot[(county, level[0])] = per_slot.get((county, level[0]), 0) + 1

        rows = []
        for k, county, (level, lo, hi) in layout:
            in_county = self.geo[self.geo["county"] == county]
            site = in_county.iloc[int(rng.integers(0, len(in_county)))]
            n_students = round(students.get((county, level), 0) / per_slot[(county, level)])
            rows.append({
                "school_id": f"S{k + 1:04d}", "x": site["x"], "y": site["y"],
                "low_grade": GRADE_LABELS[lo], "high_grade": GRADE_LABELS[hi],
                "n_students": "" if k % 5 == 4 else n_students,
                "n_teachers": "" if k % 7 == 6 else max(1, round(n_students / 15)),
                "active": 1, "regular": 1, "school_type": level,
            })
        site = self.geo.iloc[0]
        for sid, active, regular in (("S9001", 0, 1), ("S9002", 1, 0)):
            rows.append({"school_id": sid, "x": site["x"], "y": site["y"], "low_grade": "KG",
                         "high_grade": "12", "n_students": 50, "n_teachers": 4, "active": active,
                         "regular": regular, "school_type": "special"})
        return pd.DataFrame(rows)

    # -- output -----------------------------------------------------------

    def write(self, out_dir: str) -> Tuple[str, str]:
        """
        Generate everything and write ``out_dir/inputs`` and ``out_dir/truth``.

        Returns:
            (inputs dir, truth dir)
        """
        inputs = os.path.join(out_dir, "inputs")
        truth = os.path.join(out_dir, "truth")
        os.makedirs(inputs, exist_ok=True)
        os.makedirs(truth, exist_ok=True)

        self._households()
        self._group_quarters()
        pool = self._pool()

        hh_rows, p_rows = [], []
        for hh in sorted(pool, key=lambda h: h.hh_id):
            hh_rows.append({"hh_id": hh.hh_id, "puma": hh.puma, "income": int(hh.income), "snap": int(hh.snap)})
            for num, m in enumerate(hh.members, start=1):
                p_rows.append({
                    "hh_id": hh.hh_id, "person_num": num, "age": m.age, "sex": m.sex,
                    "race_eth": m.race_ethnicity, "relationship": m.relationship,
                    "industry": m.industry or "",
                    "grade": "" if m.grade is None else GRADE_LABELS[m.grade],
                    "is_worker": int(m.is_worker),
                })
        pd.DataFrame(hh_rows).to_csv(os.path.join(inputs, "pums_households.csv"), index=False)
        pd.DataFrame(p_rows).to_csv(os.path.join(inputs, "pums_persons.csv"), index=False)

        self.marginals().to_csv(os.path.join(inputs, "cbg_marginals.csv"), index=False)
        od, wac = self.commutes()
        od.to_csv(os.path.join(inputs, "od.csv"), index=False)
        wac.to_csv(os.path.join(inputs, "wac.csv"), index=False)
        self.employers(wac).to_csv(os.path.join(inputs, "cbp.csv"), index=False)
        self.schools().to_csv(os.path.join(inputs, "schools.csv"), index=False)
        self.geo.to_csv(os.path.join(inputs, "geo.csv"), index=False)
        pd.DataFrame(sorted(self.puma_urban.items()), columns=["puma", "urban_pct"]).to_csv(
            os.path.join(inputs, "puma_urban.csv"), index=False)
        pd.DataFrame(sorted(self.gq_props.items()), columns=["industry", "proportion"]).to_csv(
            os.path.join(inputs, "gq_industry.csv"), index=False)
        fixture_schema(self.full_schema, self.spec.schema_width, self.spec.n_offtarget).save(
            os.path.join(inputs, "target_schema.yaml"))

        pd.DataFrame([(h.cbg, h.hh_id) for h in self.truth.households], columns=["cbg", "hh_id"]).to_csv(
            os.path.join(truth, "households.csv"), index=False)
        pd.DataFrame(self.truth.gq, columns=["cbg", "band", "type", "residents"]).to_csv(
            os.path.join(truth, "gq.csv"), index=False)
        gq_workers = [(cbg, ind, int(w[i])) for cbg, w in sorted(self.truth.gq_workers.items())
                      for i, ind in enumerate(INDUSTRIES) if w[i]]
        pd.DataFrame(gq_workers, columns=["cbg", "industry", "count"]).to_csv(
            os.path.join(truth, "gq_workers.csv"), index=False)

        logger.info("Fixture written to %s: %d CBGs, %d truth households, %d pool households, %d GQs",
                    out_dir, len(self.geo), len(self.truth.households), len(pool), len(self.truth.gq))
        return inputs, truth


def generate_fixture(spec: FixtureSpec, out_dir: str) -> Tuple[str, str]:
    """Generate a fixture region under ``out_dir``; returns (inputs dir, truth dir)."""
    return FixtureGenerator(spec).write(out_dir)
