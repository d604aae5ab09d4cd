"""
Materializes persons, households, group quarters, schools and workplaces
from the household selections, then assigns students, commutes, teachers,
GQ staff and workplaces.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from popnet.config.settings import (
    GQ_AGE_RANGES, GQ_KINDS, INDUSTRIES, MIN_PLACE_RESIDENTS, OUTSIDE,
    STAFF_INDUSTRY, TEACHER_INDUSTRY,
)
from popnet.data.inputs import PersonAttrs, RegionInputs
from popnet.services.apportion import largest_remainder, round_half_up
from popnet.services.ingest import GqCounts, LognormalParams
from popnet.services.ipf import CommuteMatrix
from popnet.services.streams import stream

logger = logging.getLogger(__name__)


@dataclass
class Person:
    person_id: int
    home_cbg: str
    attrs: PersonAttrs
    household_id: Optional[str] = None
    gq_id: Optional[str] = None
    placeholder: bool = False
    school_id: Optional[str] = None
    workplace_id: Optional[str] = None
    work_cbg: Optional[str] = None

    @property
    def is_commuter(self) -> bool:
        return bool(self.attrs.is_worker and self.attrs.industry is not None and not self.placeholder)


@dataclass
class Place:
    """A school, workplace or GQ. ``capacity`` is enrolment / drawn size / residents."""
    place_id: str
    kind: str
    cbg: str
    capacity: int = 0
    size: int = 0
    low_grade: Optional[int] = None
    high_grade: Optional[int] = None
    n_teachers: int = 0
    industry: Optional[str] = None
    gq_type: Optional[str] = None

    @property
    def in_network(self) -> bool:
        return self.cbg != OUTSIDE


@dataclass
class Population:
    persons: List[Person] = field(default_factory=list)
    places: Dict[str, Place] = field(default_factory=dict)
    households: Dict[str, List[int]] = field(default_factory=dict)

    def add_person(self, home_cbg: str, attrs: PersonAttrs, **kwargs) -> Person:
        person = Person(person_id=len(self.persons), home_cbg=home_cbg, attrs=attrs, **kwargs)
        self.persons.append(person)
        if person.household_id is not None:
            self.households.setdefault(person.household_id, []).append(person.person_id)
        return person

    def add_place(self, place: Place) -> Place:
        if place.place_id in self.places:
            raise ValueError(f"duplicate place id {place.place_id}")
        self.places[place.place_id] = place
        return place

    def members_by_place(self) -> Dict[str, List[int]]:
        """Place id -> person ids (students and teachers for schools, residents and staff for GQs)."""
        members: Dict[str, List[int]] = {pid: [] for pid in self.places}
        for p in self.persons:
            for pid in (p.school_id, p.gq_id, p.workplace_id):
                if pid is not None and pid in members:
                    members[pid].append(p.person_id)
        return members

    def refresh_sizes(self):
        for place_id, ids in self.members_by_place().items():
            self.places[place_id].size = len(ids)

    def workers(self) -> List[Person]:
        return [p for p in self.persons if p.is_commuter]

    @property
    def n_placeholders(self) -> int:
        return sum(1 for p in self.persons if p.placeholder)


def _gq_attrs(band: str, n: int, rng: np.random.Generator) -> List[PersonAttrs]:
    lo, hi = GQ_AGE_RANGES[band]
    ages = rng.integers(lo, hi + 1, size=n)
    sexes = rng.choice(["M", "F"], size=n)
    return [PersonAttrs(age=int(a), sex=str(s), race_ethnicity=None, industry=None, income=None,
                        grade=None, is_worker=False, relationship="gq")
            for a, s in zip(ages, sexes)]


def _gq_industries(n_residents: int, row: Optional[np.ndarray], rng: np.random.Generator) -> List[Optional[str]]:
    """Industries for GQ residents from a fitted IPF row; the rest are not employed."""
    out: List[Optional[str]] = [None] * n_residents
    if row is None or n_residents == 0:
        return out
    row = np.clip(np.asarray(row, dtype=float), 0.0, None)
    n_workers = min(int(round_half_up(row.sum())), n_residents)
    if n_workers == 0:
        return out
    counts = largest_remainder(row, n_workers)
    order = rng.permutation(n_residents)
    k = 0
    for i, c in enumerate(counts):
        for _ in range(int(c)):
            out[order[k]] = INDUSTRIES[i]
            k += 1
    return out


def instantiate_population(region: RegionInputs, selections: Mapping[str, Sequence[int]],
                           gq_counts: Mapping[str, GqCounts], master_seed: int,
                           gq_industry_rows: Optional[Mapping[str, Mapping[str, np.ndarray]]] = None,
                           min_gq_residents: int = MIN_PLACE_RESIDENTS) -> Population:
    """
    Clone selected microdata households into persons and create GQs.

    Person ids are dense and ordered: household members by CBG id then
    selection order, then GQ residents by CBG id and GQ kind. At most one
    GQ of each kind exists per CBG, and only when its resident count is at
    least ``min_gq_residents``.

    Args:
        region: loaded inputs (households are looked up by selection index)
        selections: cbg -> microdata household indices
        gq_counts: cbg -> GqCounts
        master_seed: run seed
        gq_industry_rows: cbg -> {"civilian_gq": row, "military_gq": row}
            from the industry x residence fit
        min_gq_residents: GQ creation threshold

    Returns:
        Population
    """
    pop = Population()
    for cbg in sorted(selections):
        for k, idx in enumerate(selections[cbg]):
            hh = region.households[int(idx)]
            hh_id = f"H:{cbg}:{k}"
            for attrs in hh.members:
                pop.add_person(cbg, attrs, household_id=hh_id)
    n_household_persons = len(pop.persons)

    for cbg in sorted(gq_counts):
        counts = gq_counts[cbg]
        rows = (gq_industry_rows or {}).get(cbg, {})
        for band, gq_type in GQ_KINDS:
            n = counts.get(band, gq_type)
            if n < min_gq_residents:
                continue
            place_id = f"G:{cbg}:{band}:{gq_type}"
            pop.add_place(Place(place_id=place_id, kind="gq", cbg=cbg, capacity=n, gq_type=gq_type))
            rng = stream(master_seed, "gq", place_id)
            attrs = _gq_attrs(band, n, rng)
            if band == "18_64" and gq_type != "institutional":
                key = "military_gq" if gq_type == "military" else "civilian_gq"
                industries = _gq_industries(n, rows.get(key), rng)
                attrs = [replace(a, industry=ind, is_worker=ind is not None) for a, ind in zip(attrs, industries)]
            for a in attrs:
                pop.add_person(cbg, a, gq_id=place_id)

    logger.info("Instantiated %d household members in %d households and %d GQ residents in %d GQs",
                n_household_persons, len(pop.households), len(pop.persons) - n_household_persons,
                sum(1 for p in pop.places.values() if p.kind == "gq"))
    return pop


def nearest_cbg(x: float, y: float, geo: pd.DataFrame) -> str:
    """CBG whose centroid is closest to (x, y); ties go to the lower id."""
    dist = np.hypot(geo["x"].to_numpy(float) - x, geo["y"].to_numpy(float) - y)
    order = np.lexsort((geo.index.to_numpy().astype(str), dist))
    return str(geo.index[order[0]])


def add_schools(pop: Population, schools: pd.DataFrame, geo: pd.DataFrame) -> Dict[str, Place]:
    """Create school places (capacity = reported students) located at their nearest CBG."""
    created = {}
    for s in schools.itertuples(index=False):
        place = Place(
            place_id=str(s.school_id), kind="school", cbg=nearest_cbg(float(s.x), float(s.y), geo),
            capacity=int(round_half_up(s.n_students)), low_grade=int(s.low_grade), high_grade=int(s.high_grade),
            n_teachers=int(round_half_up(s.n_teachers)),
        )
        created[place.place_id] = pop.add_place(place)
    return created


@dataclass
class StudentReport:
    assigned: int = 0
    unassigned: int = 0
    overfilled: Set[str] = field(default_factory=set)


def assign_students(pop: Population, rankings: Mapping[Tuple[str, int], Sequence[str]],
                    rng: np.random.Generator, first_choice_prob: float = 0.9) -> StudentReport:
    """
    Assign household members with a grade to schools.

    Students are visited in a random order. The closest school with room is
    taken with probability ``first_choice_prob``, otherwise the next one
    with room. When every ranked school is full the closest (or, with the
    complementary probability, the second closest) is overfilled.

    Args:
        pop: population with school places added
        rankings: (cbg, grade) -> ranked school ids
        rng: students stream
        first_choice_prob: probability of the first open school

    Returns:
        StudentReport
    """
    report = StudentReport()
    enrolled = {pid: 0 for pid, p in pop.places.items() if p.kind == "school"}
    students = [p.person_id for p in pop.persons
                if p.attrs.grade is not None and p.household_id is not None]
    for person_id in rng.permutation(np.array(students, dtype=np.int64)):
        person = pop.persons[int(person_id)]
        ranked = [s for s in rankings.get((person.home_cbg, person.attrs.grade), []) if s in enrolled]
        if not ranked:
            report.unassigned += 1
            continue
        open_ = [s for s in ranked if enrolled[s] < pop.places[s].capacity]
        if open_:
            choices, full = open_, False
        else:
            choices, full = ranked, True
        if len(choices) == 1 or rng.random() < first_choice_prob:
            chosen = choices[0]
        else:
            chosen = choices[1]
        if full:
            report.overfilled.add(chosen)
        enrolled[chosen] += 1
        person.school_id = chosen
        report.assigned += 1
    if report.unassigned:
        logger.warning("%d students have no school offering their grade nearby", report.unassigned)
    if report.overfilled:
        logger.info("Overfilled %d schools", len(report.overfilled))
    return report


def assign_commutes(workers_by_industry: Mapping[str, Sequence[int]], commute: CommuteMatrix,
                    rng: np.random.Generator) -> Dict[int, str]:
    """
    Destination for each worker of one origin CBG.

    Each industry's row is integerized to the worker count with the
    largest-remainder method, its workers shuffled and handed out in
    destination column order.

    Args:
        workers_by_industry: industry -> person ids living in the origin
        commute: the origin's fitted matrix
        rng: commute stream of the origin

    Returns:
        person id -> destination CBG (or OUTSIDE)
    """
    out: Dict[int, str] = {}
    for industry in INDUSTRIES:
        workers = sorted(workers_by_industry.get(industry, []))
        if not workers:
            continue
        row = np.clip(commute.row(industry), 0.0, None)
        if row.sum() <= 0:
            logger.warning("Origin %s: no commute cells for %d %s workers; sent OUTSIDE",
                           commute.origin_cbg, len(workers), industry)
            out.update({w: OUTSIDE for w in workers})
            continue
        if abs(row.sum() - len(workers)) >= 1.0:
            logger.debug("Origin %s %s: %d workers against %.2f expected",
                         commute.origin_cbg, industry, len(workers), row.sum())
        counts = largest_remainder(row, len(workers))
        shuffled = rng.permutation(np.array(workers, dtype=np.int64))
        k = 0
        for dest, c in zip(commute.destinations, counts):
            for w in shuffled[k:k + int(c)]:
                out[int(w)] = dest
            k += int(c)
    return out


def generate_workplaces(dest_cbg: str, industry: str, worker_ids: Sequence[int], params: LognormalParams,
                        rng: np.random.Generator, n_inbound: int = 0) -> List[Tuple[Place, List[Optional[int]]]]:
    """
    Draw employers for one (destination, industry) until the jobs are covered.

    Sizes are round(exp(N(mu, sigma))) clamped to >= 1; the last employer
    keeps its drawn size. Resident workers fill randomly chosen slots; the
    remaining slots (inbound commuters and overshoot) are placeholders,
    marked None.

    Args:
        dest_cbg: destination CBG id
        industry: industry code
        worker_ids: resident workers commuting here in this industry
        params: employer-size distribution for the destination's county
        rng: workplace stream for (dest, industry)
        n_inbound: commuters arriving from outside the region

    Returns:
        list of (Place, slot list of person ids or None)
    """
    need = len(worker_ids) + int(n_inbound)
    if need < 1:
        raise ValueError("generate_workplaces needs at least one job")
    sizes = []
    while sum(sizes) < need:
        sizes.append(max(1, int(round(float(np.exp(rng.normal(params.mu, params.sigma)))))))
    slots: List[Optional[int]] = [int(w) for w in sorted(worker_ids)] + [None] * (sum(sizes) - len(worker_ids))
    order = rng.permutation(len(slots))
    slots = [slots[i] for i in order]

    out = []
    k = 0
    for j, size in enumerate(sizes):
        place = Place(place_id=f"W:{dest_cbg}:{industry}:{j}", kind="workplace", cbg=dest_cbg,
                      capacity=size, size=size, industry=industry)
        out.append((place, slots[k:k + size]))
        k += size
    return out


def _draw_nearby(need: int, target_cbg: str, industry: str, available: Dict[Tuple[str, str], List[int]],
                 geo: pd.DataFrame, rng: np.random.Generator) -> List[int]:
    """
    Draw up to ``need`` workers of ``industry`` commuting to ``target_cbg``,
    then to other CBGs of its tract, then of its county, without replacement.
    """
    drawn: List[int] = []
    tract, county = geo.at[target_cbg, "tract"], geo.at[target_cbg, "county"]
    tiers = [
        [target_cbg],
        sorted(c for c in geo.index[geo["tract"] == tract] if c != target_cbg),
        sorted(c for c in geo.index[(geo["county"] == county) & (geo["tract"] != tract)]),
    ]
    for cbgs in tiers:
        if len(drawn) >= need:
            break
        candidates = [w for c in cbgs for w in available.get((c, industry), [])]
        if not candidates:
            continue
        take = min(need - len(drawn), len(candidates))
        picked = rng.choice(np.array(candidates, dtype=np.int64), size=take, replace=False)
        picked_set = set(int(w) for w in picked)
        for c in cbgs:
            key = (c, industry)
            if key in available:
                available[key] = [w for w in available[key] if w not in picked_set]
        drawn.extend(int(w) for w in picked)
    return drawn


def _available_commuters(pop: Population, industry: str) -> Dict[Tuple[str, str], List[int]]:
    available: Dict[Tuple[str, str], List[int]] = {}
    for p in pop.persons:
        if (p.is_commuter and p.attrs.industry == industry and p.workplace_id is None
                and p.work_cbg not in (None, OUTSIDE)):
            available.setdefault((p.work_cbg, industry), []).append(p.person_id)
    return available


def assign_teachers(pop: Population, geo: pd.DataFrame, master_seed: int) -> Dict[str, int]:
    """
    Staff each school with education workers commuting to the school's CBG,
    topping up from the same tract and then the same county.

    Returns:
        school id -> shortfall (only under-staffed schools)
    """
    available = _available_commuters(pop, TEACHER_INDUSTRY)
    deficits = {}
    for place in sorted((p for p in pop.places.values() if p.kind == "school"), key=lambda p: p.place_id):
        if place.n_teachers <= 0:
            continue
        rng = stream(master_seed, "teachers", place.place_id)
        drawn = _draw_nearby(place.n_teachers, place.cbg, TEACHER_INDUSTRY, available, geo, rng)
        for w in drawn:
            pop.persons[w].workplace_id = place.place_id
        if len(drawn) < place.n_teachers:
            deficits[place.place_id] = place.n_teachers - len(drawn)
            logger.warning("School %s under-staffed: %d of %d teachers", place.place_id, len(drawn), place.n_teachers)
    return deficits


def staff_count(residents: int, gq_type: str, institutional_ratio: float = 0.1,
                noninstitutional_ratio: float = 0.02) -> int:
    ratio = institutional_ratio if gq_type == "institutional" else noninstitutional_ratio
    return max(0, round_half_up(ratio * residents))


def assign_gq_staff(pop: Population, geo: pd.DataFrame, master_seed: int, institutional_ratio: float = 0.1,
                    noninstitutional_ratio: float = 0.02) -> Dict[str, int]:
    """
    Staff each GQ with public-administration workers commuting to its CBG
    (same tract, then county fallback as for teachers).

    Returns:
        gq id -> shortfall (only under-staffed GQs)
    """
    available = _available_commuters(pop, STAFF_INDUSTRY)
    deficits = {}
    for place in sorted((p for p in pop.places.values() if p.kind == "gq"), key=lambda p: p.place_id):
        need = staff_count(place.capacity, place.gq_type, institutional_ratio, noninstitutional_ratio)
        if need == 0:
            continue
        rng = stream(master_seed, "staff", place.place_id)
        drawn = _draw_nearby(need, place.cbg, STAFF_INDUSTRY, available, geo, rng)
        for w in drawn:
            pop.persons[w].workplace_id = place.place_id
        if len(drawn) < need:
            deficits[place.place_id] = need - len(drawn)
            logger.warning("GQ %s has %d of %d staff", place.place_id, len(drawn), need)
    return deficits


def inbound_jobs(od: pd.DataFrame, wac: Mapping[str, np.ndarray]) -> Dict[Tuple[str, str], int]:
    """
    Jobs held by commuters from OUTSIDE, per (destination, industry), split by
    the destination's WAC industry mix.
    """
    inbound = od[od["home_cbg"] == OUTSIDE].groupby("work_cbg")["count"].sum()
    out = {}
    for dest, total in inbound.items():
        if dest == OUTSIDE:
            continue
        n = int(round_half_up(total))
        mix = np.asarray(wac.get(dest, np.zeros(len(INDUSTRIES))), dtype=float)
        if n == 0 or mix.sum() <= 0:
            continue
        for ind, c in zip(INDUSTRIES, largest_remainder(mix, n)):
            if c > 0:
                out[(dest, ind)] = int(c)
    return out


def place_workers(pop: Population, employer_params: Mapping[str, LognormalParams],
                  region_params: LognormalParams, cbg_county: Mapping[str, str], master_seed: int,
                  inbound: Optional[Mapping[Tuple[str, str], int]] = None) -> int:
    """
    Generate workplaces for commuters without a job place yet, plus placeholder
    persons for unfilled slots, and single-person placeholder workplaces for
    residents working OUTSIDE.

    Workplace sizes follow the destination county's fit (county from
    ``cbg_county``), or ``region_params`` for counties without one.

    Returns:
        number of placeholder persons created
    """
    inbound = dict(inbound or {})
    groups: Dict[Tuple[str, str], List[int]] = {}
    for p in pop.persons:
        if not p.is_commuter or p.workplace_id is not None or p.work_cbg is None:
            continue
        if p.work_cbg == OUTSIDE:
            place = pop.add_place(Place(place_id=f"W:{OUTSIDE}:{p.person_id}", kind="workplace", cbg=OUTSIDE,
                                        capacity=1, size=1, industry=p.attrs.industry))
            p.workplace_id = place.place_id
            continue
        groups.setdefault((p.work_cbg, p.attrs.industry), []).append(p.person_id)

    n_placeholders = 0
    for dest, industry in sorted(set(groups) | set(inbound), key=lambda k: (k[0], INDUSTRIES.index(k[1]))):
        workers = groups.get((dest, industry), [])
        params = employer_params.get(cbg_county.get(dest), region_params)
        rng = stream(master_seed, "workplaces", dest, industry)
        for place, slots in generate_workplaces(dest, industry, workers, params, rng, inbound.get((dest, industry), 0)):
            pop.add_place(place)
            for slot in slots:
                if slot is None:
                    attrs = PersonAttrs(age=None, sex=None, race_ethnicity=None, industry=industry, income=None,
                                        grade=None, is_worker=True, relationship="placeholder")
                    pop.add_person(OUTSIDE, attrs, placeholder=True, workplace_id=place.place_id, work_cbg=dest)
                    n_placeholders += 1
                else:
                    pop.persons[slot].workplace_id = place.place_id
    logger.info("Generated %d workplaces with %d placeholder workers",
                sum(1 for p in pop.places.values() if p.kind == "workplace" and p.in_network), n_placeholders)
    return n_placeholders
