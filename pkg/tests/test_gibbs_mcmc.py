import json
import math

import numpy as np
import pytest

from rfimlab import (
    ModelParams,
    build_lattice,
    enumerate_gibbs,
    estimate,
    heat_bath_sweep,
    init_chain,
    mcmc_summary,
    overlap_moments,
    parallel_tempering,
    run_two_replicas,
    sample_disorder,
    tempered_two_replicas,
)


def test_replay_is_byte_identical(chain6):
    lat, dis = chain6
    p = ModelParams(0.6, 0.8)
    a = run_two_replicas(lat, dis, p, sweeps=400, burn_in=40, seed=9)
    b = run_two_replicas(lat, dis, p, sweeps=400, burn_in=40, seed=9)
    assert a.spins1.tobytes() == b.spins1.tobytes()
    assert a.spins2.tobytes() == b.spins2.tobytes()
    assert a.r12.tobytes() == b.r12.tobytes()
    assert a.energy.tobytes() == b.energy.tobytes()
    c = run_two_replicas(lat, dis, p, sweeps=400, burn_in=40, seed=10)
    assert a.spins1.tobytes() != c.spins1.tobytes()


def test_run_validation(chain6):
    lat, dis = chain6
    p = ModelParams(0.5, 0.5)
    with pytest.raises(ValueError):
        run_two_replicas(lat, dis, p, sweeps=10, burn_in=10, seed=0)
    with pytest.raises(ValueError):
        run_two_replicas(lat, dis, p, sweeps=10, burn_in=-1, seed=0)


def test_estimate_iid_series():
    rng = np.random.default_rng(3)
    x = rng.normal(size=40000)
    e = estimate(x)
    assert abs(e.mean) < 4 / math.sqrt(x.size)
    assert abs(e.tau - 0.5) < 0.05
    assert abs(e.std_error - x.std() / math.sqrt(x.size)) < 0.2 * e.std_error
    assert e.ess > 0.8 * x.size


@pytest.mark.parametrize("rho,slack", [(0.8, 0.35), (0.9, 0.2)])
def test_estimate_correlated_series(rho, slack):
    # AR(1) with coefficient rho has tau = (1 + rho) / (2 (1 - rho))
    rng = np.random.default_rng(11)
    eps = rng.normal(size=200000)
    x = np.empty_like(eps)
    x[0] = eps[0]
    for t in range(1, eps.size):
        x[t] = rho * x[t - 1] + eps[t]
    e = estimate(x)
    tau_true = (1 + rho) / (2 * (1 - rho))
    assert abs(e.tau - tau_true) < slack * tau_true
    assert e.ess < 0.4 * x.size


def test_estimate_edge_cases():
    with pytest.raises(ValueError):
        estimate(np.zeros(50))
    e = estimate(np.full(200, 3.14))  # constant series has zero variance
    assert e.mean == pytest.approx(3.14)
    assert e.std_error == 0.0
    assert e.tau == 0.5


def test_two_replica_estimates_match_exact():
    lat = build_lattice(1, 5)
    dis = sample_disorder(lat, seed=6, realization_id=1)
    p = ModelParams(0.6, 0.9)
    exact = enumerate_gibbs(lat, dis, p)
    mom = overlap_moments(exact)
    summary, est = mcmc_summary(lat, dis, p, sweeps=12000, burn_in=1000, seed=77)
    for key, truth in (("r12", mom.r12), ("r12_sq", mom.r12_sq)):
        z = abs(est[key].mean - truth) / est[key].std_error
        assert z < 4.0, f"{key}: z = {z:.2f}"
    zm = np.abs(summary.magnetization - exact.magnetization) / summary.std_error["m"]
    assert zm.max() < 4.5
    assert summary.log_partition is None and summary.psi is None
    assert summary.source == "mcmc"
    off = ~np.eye(lat.n_sites, dtype=bool)
    zc = (
        np.abs(summary.correlation - exact.correlation)[off]
        / summary.std_error["C"][off]
    )
    assert zc.max() < 4.5


def test_series_dump_formats(tmp_path, chain6):
    lat, dis = chain6
    series = run_two_replicas(lat, dis, ModelParams(0.5, 0.5), sweeps=150, burn_in=20, seed=1)
    jpath = tmp_path / "series.jsonl"
    series.to_records(jpath, fmt="jsonl")
    rows = [json.loads(line) for line in jpath.read_text().splitlines()]
    assert len(rows) == 130
    assert rows[0]["sweep"] == 20
    assert set(rows[0]) == {"sweep", "r12", "hn", "energy"}
    assert rows[3]["r12"] == pytest.approx(series.r12[3])

    tpath = tmp_path / "series.txt"
    series.to_records(tpath, fmt="text")
    lines = tpath.read_text().splitlines()
    assert lines[0] == "# sweep r12 hn energy"
    cols = lines[1].split()
    assert int(cols[0]) == 20
    assert float(cols[1]) == pytest.approx(series.r12[0])
    with pytest.raises(ValueError):
        series.to_records(tmp_path / "x", fmt="csv")


def test_single_rung_ladder_is_plain_chain(chain6):
    lat, dis = chain6
    p = ModelParams(0.7, 0.6)
    rungs = parallel_tempering(lat, dis, [p], sweeps=60, seed=5, burn_in=0)
    assert len(rungs) == 1
    chain = init_chain(lat, seed=5, stream_id=0)
    manual = []
    for _ in range(60):
        heat_bath_sweep(chain, lat, dis, p)
        manual.append(chain.spins.copy())
    assert np.array_equal(rungs[0].spins, np.stack(manual))
    assert rungs[0].swap_attempts == 0


def test_tempering_swap_bookkeeping(chain6):
    lat, dis = chain6
    ladder = [ModelParams(b, 0.6) for b in (0.2, 0.5, 0.9)]
    rungs = parallel_tempering(lat, dis, ladder, sweeps=101, seed=2, burn_in=0)
    # even sweeps try pair (0,1), odd sweeps pair (1,2); counts go to the
    # lower rung of each pair
    assert [r.swap_attempts for r in rungs] == [51, 50, 0]
    assert all(0 <= r.swap_accepts <= r.swap_attempts for r in rungs)
    assert rungs[1].swap_accepts > 0  # adjacent betas swap often


def test_tempering_marginals_match_exact():
    lat = build_lattice(1, 4)
    dis = sample_disorder(lat, seed=13, realization_id=0)
    ladder = [ModelParams(b, 0.8) for b in (0.3, 0.6, 1.0)]
    rungs = parallel_tempering(lat, dis, ladder, sweeps=9000, seed=21, burn_in=500)
    for rung in (rungs[0], rungs[2]):
        exact = enumerate_gibbs(lat, dis, rung.params)
        e = estimate(rung.hn)
        truth = float(dis.values @ exact.magnetization) / lat.n_sites
        z = abs(e.mean - truth) / e.std_error
        assert z < 4.0, f"beta={rung.params.beta}: z = {z:.2f}"


def test_tempering_validation(chain6):
    lat, dis = chain6
    with pytest.raises(ValueError):
        parallel_tempering(lat, dis, [], sweeps=10, seed=0)
    mixed_h = [ModelParams(0.5, 0.5), ModelParams(0.7, 0.6)]
    with pytest.raises(ValueError):
        parallel_tempering(lat, dis, mixed_h, sweeps=10, seed=0)
    ladder = [ModelParams(0.5, 0.5)]
    with pytest.raises(ValueError):
        parallel_tempering(lat, dis, ladder, sweeps=5, seed=0, burn_in=5)


def test_equal_beta_rungs_always_swap(chain6):
    # zero action difference, so every proposed exchange is accepted
    lat, dis = chain6
    ladder = [ModelParams(0.8, 0.6), ModelParams(0.8, 0.6)]
    rungs = parallel_tempering(lat, dis, ladder, sweeps=400, seed=7, burn_in=0)
    assert rungs[0].swap_attempts == 200
    assert rungs[0].swap_accepts == rungs[0].swap_attempts


def test_independent_spins_single_site_mean():
    # without couplings each site follows P(s) prop exp(h g s), so the
    # empirical magnetization must approach tanh(h g)
    lat = build_lattice(1, 1)
    dis = sample_disorder(lat, seed=9, realization_id=0)
    p = ModelParams(0.0, 1.3)
    series = run_two_replicas(lat, dis, p, sweeps=40000, burn_in=1000, seed=5)
    e = estimate(series.spins1[:, 0].astype(float))
    target = math.tanh(p.h * dis.values[0])
    assert abs(e.mean - target) < 3 * e.std_error


def test_independent_spins_overlap_moments():
    # beta = 0 with a negligible field: overlap of two replicas is a mean of
    # V independent signs, so E[R12] = 0 and E[R12^2] = 1/V
    lat = build_lattice(1, 8)
    dis = sample_disorder(lat, seed=11, realization_id=0)
    p = ModelParams(0.0, 1e-6)
    series = run_two_replicas(lat, dis, p, sweeps=30000, burn_in=500, seed=6)
    e1 = estimate(series.r12)
    e2 = estimate(series.r12**2)
    assert abs(e1.mean) < 3 * e1.std_error
    assert abs(e2.mean - 1 / lat.n_sites) < 3 * e2.std_error
    assert abs(e1.mean) < 1.0  # replicas are not locked together


def test_tempered_two_replicas_matches_exact():
    lat = build_lattice(1, 5)
    dis = sample_disorder(lat, seed=55, realization_id=0)
    p = ModelParams(1.2, 0.7)
    exact = enumerate_gibbs(lat, dis, p)
    mom = overlap_moments(exact)
    series = tempered_two_replicas(
        lat, dis, p, [0.4, 0.8], sweeps=15000, burn_in=1500, seed=3
    )
    er = estimate(series.r12)
    eh = estimate(series.hn)
    truth_h = float(dis.values @ exact.magnetization) / lat.n_sites
    assert abs(er.mean - mom.r12) < 4 * er.std_error
    assert abs(eh.mean - truth_h) < 4 * eh.std_error
    assert series.r12.shape == (13500,)


def test_tempered_two_replicas_replay_and_validation(chain6):
    lat, dis = chain6
    p = ModelParams(0.9, 0.5)
    kw = dict(sweeps=300, burn_in=30, seed=12)
    a = tempered_two_replicas(lat, dis, p, [0.3, 0.6], **kw)
    b = tempered_two_replicas(lat, dis, p, [0.3, 0.6], **kw)
    assert a.spins1.tobytes() == b.spins1.tobytes()
    assert a.spins2.tobytes() == b.spins2.tobytes()
    assert np.array_equal(a.r12, b.r12)
    # target beta joins the ladder even when the helper list repeats it
    c = tempered_two_replicas(lat, dis, p, [0.3, 0.9, 0.6], **kw)
    assert c.r12.shape == a.r12.shape
    with pytest.raises(ValueError):
        tempered_two_replicas(lat, dis, p, [0.3], sweeps=10, burn_in=10, seed=0)


def test_mcmc_summary_ladder_dispatch():
    lat = build_lattice(1, 5)
    dis = sample_disorder(lat, seed=6, realization_id=1)
    p = ModelParams(0.6, 0.9)
    exact = enumerate_gibbs(lat, dis, p)
    mom = overlap_moments(exact)
    summary, est = mcmc_summary(
        lat, dis, p, sweeps=8000, burn_in=800, seed=4, ladder=[0.3, 1.2]
    )
    assert summary.source == "mcmc"
    z = abs(est["r12"].mean - mom.r12) / est["r12"].std_error
    assert z < 4.0, f"z = {z:.2f}"
