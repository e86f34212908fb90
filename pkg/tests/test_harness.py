import numpy as np
import pytest

from ehsched._validation import InvalidInputError
from ehsched.harness import (CampaignConfig, CertificationError, generate_instance, run_campaign,
                             run_trial, substream, summary_csv, thread_count, truncated_gaussian)


def test_generation_is_deterministic():
    cfg = CampaignConfig(mu_E=4.0, sigma2=2.0, seed=11)
    a, b = generate_instance(cfg, 3), generate_instance(cfg, 3)
    np.testing.assert_array_equal(a.instance.E, b.instance.E)
    np.testing.assert_array_equal(a.instance.H, b.instance.H)
    c = generate_instance(cfg, 4)
    assert not np.array_equal(a.instance.H, c.instance.H)


def test_zero_harvest_generator():
    cfg = CampaignConfig(mu_E=0.0, sigma2=0.0)
    assert not generate_instance(cfg, 0).instance.E.any()


def test_channel_mean():
    rng = substream(0, 0, 0, 0, 1)
    assert 0.98 <= rng.exponential(1.0, 100_000).mean() <= 1.02


def test_truncated_gaussian_nonnegative():
    rng = substream(5, 0, 0, 0, 0)
    draws = np.array([truncated_gaussian(rng, 0.5, 2.0) for _ in range(2000)])
    assert draws.min() >= 0.0 and draws.mean() > 0.5


def test_gains_shared_across_sweep():
    cfg = CampaignConfig(mu_E=(2.0, 8.0))
    lo, hi = generate_instance(cfg, 0, 2.0), generate_instance(cfg, 0, 8.0)
    np.testing.assert_array_equal(lo.H, hi.H)


def test_single_link_optimal_equals_equal_bandwidth():
    cfg = CampaignConfig(N=1, K=12, trials=3, mu_E=(4.0,))
    reports, _ = run_campaign(cfg)
    for r in reports:
        assert r.objectives["optimal"] == pytest.approx(r.objectives["equal"], abs=1e-6)


def test_trial_dominance():
    cfg = CampaignConfig(K=15)
    r = run_trial(cfg, 0, 6.0)
    for name, v in r.objectives.items():
        assert r.objectives["optimal"] >= v - 1e-6
    assert r.kkt_residual <= 1e-4


def test_campaign_outputs_reproducible(tmp_path):
    def run(tag):
        cfg = CampaignConfig(K=8, trials=3, mu_E=(2.0, 6.0), summary_path=str(tmp_path / f"{tag}.csv"),
                             trials_path=str(tmp_path / f"{tag}.jsonl"))
        run_campaign(cfg)
        return (tmp_path / f"{tag}.csv").read_bytes(), (tmp_path / f"{tag}.jsonl").read_bytes()

    assert run("a") == run("b")
    header = run("c")[0].decode().splitlines()[0]
    assert header == "mu_E,policy,mean_rate,stderr,trials"


def test_parallel_matches_serial():
    cfg = CampaignConfig(K=8, trials=3, mu_E=(4.0,))
    _, serial = run_campaign(cfg, threads=1)
    _, parallel = run_campaign(cfg, threads=2)
    assert summary_csv(serial) == summary_csv(parallel)


def test_certification_failure_saves_instance(tmp_path):
    cfg = CampaignConfig(K=8, trials=1, mu_E=(4.0,), kkt_tolerance=-1.0, repro_dir=str(tmp_path))
    with pytest.raises(CertificationError) as info:
        run_campaign(cfg)
    assert (tmp_path / info.value.instance_path.split("/")[-1]).exists()


@pytest.mark.parametrize("doc, field", [
    ({"trials": 0}, "trials"), ({"N": 1.5}, "N"), ({"P": -1}, "P"), ({"mu_E": [-1]}, "mu_E"),
    ({"channel": "rician"}, "channel"), ({"policies": ["magic"]}, "policies"), ({"bogus": 1}, "bogus"),
])
def test_config_validation(doc, field):
    with pytest.raises(InvalidInputError) as info:
        CampaignConfig.from_dict(doc)
    assert info.value.field == field


def test_thread_count(monkeypatch):
    monkeypatch.delenv("EHSCHED_THREADS", raising=False)
    assert thread_count() == 1 and thread_count(4) == 4
    monkeypatch.setenv("EHSCHED_THREADS", "2")
    assert thread_count() == 2 and thread_count(8) == 2
    monkeypatch.setenv("EHSCHED_THREADS", "many")
    with pytest.raises(InvalidInputError):
        thread_count()
