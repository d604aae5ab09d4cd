import numpy as np
import pytest

from popnet.config.settings import INDUSTRIES, OUTSIDE
from popnet.data.inputs import load_region_inputs
from popnet.services.ingest import derive_gq_counts, filter_cbgs, p43_proportions
from popnet.services.ipf import (
    IpfInfeasibleError, IpfProblem, ResidenceCounts, commute_matrix, industry_residence_matrix, ipf_fit,
    wac_by_destination,
)


def _industry_vector(**counts):
    vec = np.zeros(len(INDUSTRIES))
    for name, value in counts.items():
        vec[INDUSTRIES.index(name)] = value
    return vec


def test_two_by_two():
    result = ipf_fit(IpfProblem(np.ones((2, 2)), np.array([3.0, 1.0]), np.array([2.0, 2.0])))
    assert result.converged
    np.testing.assert_allclose(result.matrix, [[1.5, 1.5], [0.5, 0.5]], atol=1e-9)


def test_zero_cells_stay_zero():
    seed = np.array([[1.0, 0.0], [1.0, 1.0]])
    result = ipf_fit(IpfProblem(seed, np.array([1.0, 2.0]), np.array([2.0, 1.0])))
    assert result.converged
    assert result.matrix[0, 1] == 0.0
    np.testing.assert_allclose(result.matrix.sum(axis=1), [1.0, 2.0], rtol=1e-8)
    np.testing.assert_allclose(result.matrix.sum(axis=0), [2.0, 1.0], rtol=1e-8)


def test_matching_seed_is_a_fixed_point():
    seed = np.array([[2.0, 1.0], [3.0, 4.0]])
    result = ipf_fit(IpfProblem(seed, seed.sum(axis=1), seed.sum(axis=0)))
    assert result.iterations == 0
    np.testing.assert_array_equal(result.matrix, seed)


def test_positive_target_on_zero_line_is_infeasible():
    seed = np.array([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(IpfInfeasibleError, match="row 0"):
        ipf_fit(IpfProblem(seed, np.array([1.0, 1.0]), np.array([1.0, 1.0])))


def test_mismatched_totals_rescale_columns(caplog):
    result = ipf_fit(IpfProblem(np.ones((2, 2)), np.array([3.0, 1.0]), np.array([4.0, 4.0])))
    np.testing.assert_allclose(result.matrix, [[1.5, 1.5], [0.5, 0.5]], atol=1e-9)
    assert "rescaling column targets" in caplog.text


def test_iteration_cap_reports_not_converged():
    seed = np.array([[1.0, 1e-6], [1e-6, 1.0]])
    result = ipf_fit(IpfProblem(seed, np.array([1.0, 1.0]), np.array([1.9, 0.1]), max_iters=2))
    assert not result.converged
    assert result.iterations == 2


def test_industry_residence_without_gq():
    emp = _industry_vector(RET=40, EDU=10, MED=25)
    fit = industry_residence_matrix("X", emp, ResidenceCounts(1.0, 0, 0), {"RET": 0.2})
    assert fit.converged
    np.testing.assert_allclose(fit.row("household"), emp, atol=1e-6)
    assert fit.row("civilian_gq").sum() == 0
    assert fit.row("military_gq").sum() == 0


def test_military_residents_stay_in_armed_forces():
    emp = _industry_vector(RET=30, ADM_MIL=12)
    fit = industry_residence_matrix("X", emp, ResidenceCounts(0.8, 0, 10), {})
    military = fit.row("military_gq")
    assert military[INDUSTRIES.index("ADM_MIL")] == pytest.approx(10.0, abs=1e-6)
    assert military.sum() == pytest.approx(10.0, abs=1e-6)
    np.testing.assert_allclose(fit.matrix.sum(axis=0), emp, atol=1e-6)


def test_commute_single_destination():
    counts = _industry_vector(RET=6, EDU=4)
    wac = {"B": _industry_vector(RET=50, EDU=50)}
    cm = commute_matrix("A", counts, {"B": 25.0}, wac)
    assert cm.destinations == ["B"]
    np.testing.assert_allclose(cm.cells[:, 0], counts, atol=1e-6)


def test_commute_outside_column_last():
    counts = _industry_vector(RET=6, EDU=4)
    wac = {"B": _industry_vector(RET=10, EDU=10), "C": _industry_vector(RET=5, EDU=5)}
    cm = commute_matrix("A", counts, {OUTSIDE: 4.0, "C": 2.0, "B": 4.0}, wac)
    assert cm.destinations == ["B", "C", OUTSIDE]
    np.testing.assert_allclose(cm.cells.sum(axis=0), [4.0, 2.0, 4.0], atol=1e-6)
    np.testing.assert_allclose(cm.cells.sum(axis=1), counts, atol=1e-6)


def test_commute_without_flows_goes_outside(caplog):
    counts = _industry_vector(RET=3)
    cm = commute_matrix("A", counts, {}, {})
    assert cm.destinations == [OUTSIDE]
    assert cm.total == pytest.approx(3.0)
    assert "no OD flows" in caplog.text


def _assert_margins(sums, targets):
    scale = np.where(targets > 0, targets, 1.0)
    assert np.max(np.abs(sums - targets) / scale) <= 1e-8


def test_fixture_fits_match_margins(small_fixture):
    region = load_region_inputs(small_fixture[0])
    wac = wac_by_destination(region.wac)
    od_rows = {}
    for r in region.od.itertuples(index=False):
        od_rows.setdefault(r.home_cbg, {})[r.work_cbg] = float(r.count)

    n_checked = 0
    for cbg in sorted(filter_cbgs(region)):
        row = region.cbg_table.loc[cbg]
        emp = np.array([float(row.get(f"emp_{ind}", 0.0)) for ind in INDUSTRIES])
        hh_pop, total_gq = float(row["hh_population"]), float(row["total_gq"])
        gq = derive_gq_counts(row, p43_proportions(row), cbg)
        residence = ResidenceCounts(
            household_share=hh_pop / (hh_pop + total_gq) if hh_pop + total_gq > 0 else 1.0,
            civilian_gq_18_64=gq.get("18_64", "civilian_noninst"),
            military_gq=gq.get("18_64", "military"),
        )
        try:
            fit = industry_residence_matrix(cbg, emp, residence, region.gq_industry)
            cm = commute_matrix(cbg, emp, od_rows.get(cbg, {}), wac)
        except IpfInfeasibleError:
            continue
        assert fit.converged and cm.converged

        civ = residence.civilian_gq_18_64 * sum(region.gq_industry.get(ind, 0.0) for ind in INDUSTRIES)
        mil = float(residence.military_gq)
        rows = np.array([max(emp.sum() - civ - mil, 0.0), civ, mil])
        cols = emp * rows.sum() / emp.sum() if emp.sum() > 0 else emp
        _assert_margins(fit.matrix.sum(axis=1), rows)
        _assert_margins(fit.matrix.sum(axis=0), cols)

        od = {d: c for d, c in od_rows.get(cbg, {}).items() if c > 0} or {OUTSIDE: 1.0}
        od_total = sum(od.values())
        _assert_margins(cm.cells.sum(axis=1), emp)
        _assert_margins(cm.cells.sum(axis=0), np.array([emp.sum() * od[d] / od_total for d in cm.destinations]))
        n_checked += 1
    assert n_checked > 0
