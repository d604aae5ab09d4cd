"""Small builders shared by the test modules."""
import pandas as pd

from popnet.config.settings import RunConfig
from popnet.data.inputs import PersonAttrs

SMALL_FIXTURE = dict(n_cbgs=10, households_per_cbg=40, schema_width=20, n_offtarget=6, n_schools=6,
                     gq_fraction=0.2, seed=3, cbgs_per_county=5)


def make_config(input_dir=None, out_dir=None, threads=1, **overrides) -> RunConfig:
    """RunConfig with short annealing and small epidemics."""
    config = RunConfig()
    values = {
        "input_dir": input_dir,
        "out_dir": out_dir,
        "master_seed": 11,
        "threads": threads,
        "anneal.max_steps_per_level": 5000,
        "sim.n_seeds": 5,
        "sim.replicates": 2,
        "sim.horizon_days": 60,
    }
    values.update(overrides)
    config.apply_overrides(values)
    return config


def person(age=30, sex="F", industry=None, income=50000.0, grade=None, is_worker=None,
           relationship="householder", race="white_nh") -> PersonAttrs:
    if is_worker is None:
        is_worker = industry is not None
    return PersonAttrs(age=age, sex=sex, race_ethnicity=race, industry=industry, income=income, grade=grade,
                       is_worker=is_worker, relationship=relationship)


def geo_frame(rows) -> pd.DataFrame:
    """geo table indexed by cbg from (cbg, x, y, puma, county, cbsa, urban_pct) tuples."""
    df = pd.DataFrame(rows, columns=["cbg", "x", "y", "puma", "county", "cbsa", "urban_pct"])
    df["tract"] = df["cbg"].str[:11]
    return df.set_index("cbg", drop=False)
