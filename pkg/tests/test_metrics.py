"""Metric formulas over a fabricated result record."""

import math

import pytest

from hlfspn.hlf import HlfConfig, build_hlf_net
from hlfspn.metrics import (
    METRIC_NAMES,
    MissingQueryError,
    UndefinedMetricError,
    block_call_rate,
    discard_predicate,
    discard_probability,
    metric_report,
    mrt,
    stage_utilization,
    standard_queries,
    throughput,
    timeout_call_rate,
    transactions_in_progress,
)
from hlfspn.spn import ExpectedTokens, ProbabilityOf


class StubResult:
    """Result double: fixed reward values, fixed CI halfwidth."""

    def __init__(self, values, ci=0.0):
        self.values = values
        self.ci = ci

    def has(self, query):
        return query in self.values

    def value(self, query):
        return self.values[query]

    def halfwidth(self, query):
        return self.ci


@pytest.fixture(scope="module")
def handle():
    return build_hlf_net(HlfConfig().with_arrival_rate(50.0))


def full_stub(handle, overrides=None, ci=0.0):
    values = {q: 0.0 for q in standard_queries(handle)}
    values.update(overrides or {})
    return StubResult(values, ci=ci)


class TestFormulas:
    def test_tip_sums_in_flight_places(self, handle):
        overrides = {ExpectedTokens(p): 2.0
                     for p in handle.in_progress_places}
        res = full_stub(handle, overrides, ci=0.1)
        tip = transactions_in_progress(res, handle)
        n = len(handle.in_progress_places)
        assert tip.value == pytest.approx(2.0 * n)
        assert tip.ci == pytest.approx(0.1 * math.sqrt(n))

    def test_discard_probability_reads_all_queues_empty(self, handle):
        q = ProbabilityOf(discard_predicate(handle))
        res = full_stub(handle, {q: 0.25})
        assert discard_probability(res, handle).value == 0.25
        # out-of-range estimates are clamped into [0, 1]
        assert discard_probability(
            full_stub(handle, {q: 1.2}), handle).value == 1.0

    def test_mrt_modes(self, handle):
        overrides = {ExpectedTokens(p): 0.0
                     for p in handle.in_progress_places}
        overrides[ExpectedTokens(handle.entry_place)] = 10.0
        overrides[ProbabilityOf(discard_predicate(handle))] = 0.5
        res = full_stub(handle, overrides)
        assert mrt(res, handle, 50.0, mode="literal").value == \
            pytest.approx(0.2)
        assert mrt(res, handle, 50.0, mode="effective").value == \
            pytest.approx(0.4)
        with pytest.raises(ValueError):
            mrt(res, handle, 50.0, mode="bogus")

    def test_mrt_undefined_cases(self, handle):
        res = full_stub(handle, {
            ProbabilityOf(discard_predicate(handle)): 1.0})
        with pytest.raises(UndefinedMetricError):
            mrt(res, handle, 50.0, mode="effective")
        with pytest.raises(UndefinedMetricError):
            mrt(res, handle, 0.0)

    def test_stage_utilization_is_busy_fraction(self, handle):
        # 2 of 6 commit slots free on node 1, 6 of 6 free on node 2
        overrides = {
            ExpectedTokens(handle.committer_proc_caps[0]): 2.0,
            ExpectedTokens(handle.committer_proc_caps[1]): 6.0,
        }
        res = full_stub(handle, overrides)
        assert stage_utilization(res, handle, "commit", node=1).value == \
            pytest.approx(4.0 / 6.0)
        assert stage_utilization(res, handle, "commit", node=2).value == 0.0
        assert stage_utilization(res, handle, "commit").value == \
            pytest.approx(2.0 / 6.0)
        with pytest.raises(ValueError):
            stage_utilization(res, handle, "commit", node=3)
        with pytest.raises(ValueError):
            stage_utilization(res, handle, "bogus")

    def test_throughput_mean_over_committers(self, handle):
        overrides = {
            ExpectedTokens(handle.committer_proc_fills[0]): 4.0,
            ExpectedTokens(handle.committer_proc_fills[1]): 2.0,
        }
        res = full_stub(handle, overrides)
        # (4 / 0.08 + 2 / 0.08) / 2
        assert throughput(res, handle).value == pytest.approx(37.5)

    def test_call_rates_divide_by_service_means(self, handle):
        overrides = {
            ExpectedTokens(handle.full_block): 0.01,
            ExpectedTokens(handle.partial_block): 0.002,
        }
        res = full_stub(handle, overrides)
        assert block_call_rate(res, handle).value == pytest.approx(5.0)
        assert timeout_call_rate(res, handle).value == pytest.approx(1.0)

    def test_missing_query_raises(self, handle):
        res = StubResult({})
        with pytest.raises(MissingQueryError):
            transactions_in_progress(res, handle)
        with pytest.raises(MissingQueryError):
            discard_probability(res, handle)

    def test_report_covers_all_metric_names(self, handle):
        res = full_stub(handle, {
            ExpectedTokens(handle.entry_place): 1.0})
        report = metric_report(res, handle)
        for name in METRIC_NAMES:
            metric = getattr(report, name)
            assert math.isfinite(metric.value)

    def test_standard_queries_have_no_duplicates(self, handle):
        queries = standard_queries(handle)
        assert len(queries) == len(set(queries))
