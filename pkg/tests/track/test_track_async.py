import pytest

from posetrack.track import SCENARIOS, BiasEstimator, TrackPolicy, run_benchmark


@pytest.fixture
def policy():
    """Default tracking policy."""
    return TrackPolicy()


@pytest.mark.asyncio
async def test_async_benchmark_matches_sync(policy):
    names = list(SCENARIOS)
    reports = await run_benchmark(names, BiasEstimator, policy, seed=1, n_frames=45, async_mode=True)
    expected = run_benchmark(names, BiasEstimator, policy, seed=1, n_frames=45)
    assert [r.scenario for r in reports] == names
    for a, b in zip(reports, expected):
        assert a.trans_err_mm == b.trans_err_mm
        assert a.failure_frames == b.failure_frames


@pytest.mark.asyncio
async def test_async_benchmark_single_scenario(policy):
    reports = await run_benchmark(["translation_only"], BiasEstimator, policy, async_mode=True)
    assert len(reports) == 1
    assert reports[0].failures == 13
