from __future__ import annotations

import io
import json

import pytest

from tensortomo import verify
from tensortomo.verify import VerifyRanges


def all_zero(records):
    records = list(records)
    assert records
    bad = [r for r in records if r["status"] != "exact-zero"]
    assert not bad, bad[:3]
    return records


def test_binomial_sweep_counts():
    recs = all_zero(verify.binomial_cells(8))
    assert len(recs) == sum(range(1, 9))
    # (m, r) = (3, 0): p + q <= 2 gives 6 cells
    cell = next(r for r in recs if (r["m"], r["r"]) == (3, 0))
    assert cell["cells"] == 6 and cell["max_abs_numerator"] == 0


def test_binomial_fault_is_detected():
    recs = list(verify.binomial_cells(4, fault=True))
    assert any(r["status"] == "violated" and r["max_abs_numerator"] > 0 for r in recs)


def test_symbol_sweep():
    recs = all_zero(verify.symbol_cells(3, (2, 3), trials=3))
    assert {r["n"] for r in recs} == {2, 3}


@pytest.mark.parametrize("homogeneous", [False, True])
def test_operator_sweep(homogeneous):
    recs = all_zero(verify.operator_cells(2, (2,), 3, trials=2, homogeneous=homogeneous))
    assert len(recs) == 1 + 1 + 2
    if homogeneous:
        assert {r["degree"] for r in recs} == {2 * r["k"] + r["m"] for r in recs}


def test_potential_sweep():
    all_zero(verify.potential_cells(3, (2, 3), 2))


def test_run_and_jsonl():
    ranges = VerifyRanges(m_max=1, n_set=(2,), binomial_m_max=3, symbol_m_max=1,
                          symbol_n_set=(2,), symbol_trials=1, operator_trials=1,
                          potential_m_max=1)
    fh = io.StringIO()
    count, bad = verify.write_jsonl(verify.run(ranges), fh)
    lines = fh.getvalue().splitlines()
    assert bad is None and count == len(lines) == 6 + 1 + 1 + 1
    assert [json.loads(l)["suite"] for l in lines][-3:] == ["symbol", "operator", "potential"]
    fh = io.StringIO()
    _, bad = verify.write_jsonl(verify.run(ranges, fault=True), fh)
    assert bad is not None and bad["suite"] == "binomial"


def test_suite_selection():
    ranges = VerifyRanges(binomial_m_max=2, suites=("binomial",))
    assert {r["suite"] for r in verify.run(ranges)} == {"binomial"}
    with pytest.raises(ValueError, match="unknown suites"):
        list(verify.run(VerifyRanges(suites=("bogus",))))
