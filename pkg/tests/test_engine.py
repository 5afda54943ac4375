"""Round engine: algorithm transitions, equivalences, accounting, records."""
import numpy as np
import pytest

from dfedsim.engine import (
    CSV_HEADER,
    ClientState,
    RunConfig,
    expected_total_bits,
    load_checkpoint,
    records_from_csv,
    records_to_csv,
    records_to_jsonl,
    round_dfedavgm,
    round_dfedavgm_quantized,
    run_experiment,
    save_checkpoint,
)
from dfedsim.local_training import DivergenceError, LocalTrainerConfig
from dfedsim.problems import make_logistic, make_quadratic
from dfedsim.quantization import QuantizerSpec
from dfedsim.theory import consensus_distance
from dfedsim.topology import averaging_matrix, build_ring, metropolis_hastings


class FixedGradientProblem:
    """Stub whose stochastic gradient is a per-client constant vector."""

    def __init__(self, grads):
        self.G = np.asarray(grads, dtype=float)
        self.m, self.d = self.G.shape
        self.L = None
        self.nu = None
        self.min_f = None
        self.sigma_l = 0.0
        self.sigma_g = None

    def loss(self, i, x):
        return float(self.G[i] @ x)

    def grad(self, i, x):
        return self.G[i].copy()

    def stochastic_grad(self, i, x, rng):
        return self.G[i].copy()

    def global_loss(self, x):
        return float(np.mean([self.loss(i, x) for i in range(self.m)]))

    def global_grad(self, x):
        return self.G.mean(axis=0)


def trainer(eta=0.02, theta=0.0, K=1):
    return LocalTrainerConfig(eta=eta, theta=theta, K=K)


def test_run_config_validation():
    ring = metropolis_hastings(build_ring(4))
    with pytest.raises(ValueError):
        RunConfig(algorithm="dfedavgm", T=5, trainer=trainer(), seed=0)  # no topology
    with pytest.raises(ValueError):
        RunConfig(algorithm="fedavg", T=5, trainer=trainer(), seed=0, mixing=ring)
    with pytest.raises(ValueError):
        RunConfig(algorithm="dfedavgm", T=5, trainer=trainer(), seed=0, mixing=ring,
                  quantizer=QuantizerSpec(s=1.0, b=8))
    with pytest.raises(ValueError):
        RunConfig(algorithm="dfedavgm_quantized", T=5, trainer=trainer(), seed=0,
                  mixing=ring)
    with pytest.raises(ValueError):
        RunConfig(algorithm="sort", T=5, trainer=trainer(), seed=0)


def test_two_client_round_averages_to_midpoint():
    # zero gradients: local training is the identity, so one gossip round on
    # the 2-clique (w = 1/2 everywhere) lands both clients on the midpoint
    problem = FixedGradientProblem(np.zeros((2, 3)))
    mix = averaging_matrix(2)
    states = [
        ClientState(0, np.array([1.0, 1.0, 1.0])),
        ClientState(1, np.array([0.0, 0.0, 0.0])),
    ]
    out = round_dfedavgm(states, mix, trainer(), problem, t=0, seed=0)
    for s in out:
        assert np.array_equal(s.x, np.array([0.5, 0.5, 0.5]))


def test_gossip_preserves_mean():
    p = make_quadratic(6, 5, heterogeneity=1.0, noise_sigma=0.5, seed=1)
    mix = metropolis_hastings(build_ring(6))
    states = [ClientState(i, np.random.default_rng(i).standard_normal(5)) for i in range(6)]
    z_before = np.stack([s.x for s in states])
    out = round_dfedavgm(states, mix, trainer(eta=1e-9), p, t=0, seed=0)
    x_after = np.stack([s.x for s in out])
    # local steps are ~0, so the post-gossip mean matches the pre-gossip mean
    assert np.max(np.abs(x_after.mean(axis=0) - z_before.mean(axis=0))) < 1e-8
    w_mixed = mix.w @ z_before
    assert np.max(np.abs(w_mixed.mean(axis=0) - z_before.mean(axis=0))) < 1e-12


def test_identical_clients_stay_identical():
    # identical objectives, no noise: clients remain equal up to the rounding
    # of the gossip dot products (consensus is squared distance, ~1e-30)
    p = make_quadratic(5, 4, heterogeneity=0.0, noise_sigma=0.0, seed=2)
    mix = metropolis_hastings(build_ring(5))
    cfg = RunConfig(algorithm="dfedavgm", T=10, trainer=trainer(eta=0.05, K=3),
                    seed=3, mixing=mix)
    result = run_experiment(cfg, p)
    assert all(r.consensus <= 1e-26 for r in result.records)


def test_dsgd_equals_k1_theta0_dfedavgm_bitwise():
    p = make_quadratic(6, 5, heterogeneity=0.8, noise_sigma=1.0, seed=4)
    mix = metropolis_hastings(build_ring(6))
    a = run_experiment(RunConfig(algorithm="dsgd", T=30, trainer=trainer(eta=0.03),
                                 seed=5, mixing=mix), p, collect_states=True)
    b = run_experiment(RunConfig(algorithm="dfedavgm", T=30,
                                 trainer=trainer(eta=0.03, theta=0.0, K=1),
                                 seed=5, mixing=mix), p, collect_states=True)
    assert np.array_equal(a.history, b.history)
    assert [r.f_avg for r in a.records] == [r.f_avg for r in b.records]
    assert [r.bits_total for r in a.records] == [r.bits_total for r in b.records]


def test_fedavg_equals_dfedavgm_on_averaging_matrix_bitwise():
    p = make_quadratic(5, 4, heterogeneity=0.6, noise_sigma=0.7, seed=6)
    a = run_experiment(RunConfig(algorithm="fedavg", T=25,
                                 trainer=trainer(eta=0.02, theta=0.5, K=3), seed=7),
                       p, collect_states=True)
    b = run_experiment(RunConfig(algorithm="dfedavgm", T=25,
                                 trainer=trainer(eta=0.02, theta=0.5, K=3), seed=7,
                                 mixing=averaging_matrix(5)),
                       p, collect_states=True)
    assert np.array_equal(a.history, b.history)


def test_fedavg_single_client_equals_sgd_bitwise():
    p = make_quadratic(1, 6, heterogeneity=0.0, noise_sigma=0.8, seed=8, center_scale=1.0)
    a = run_experiment(RunConfig(algorithm="fedavg", T=20,
                                 trainer=trainer(eta=0.05, theta=0.9, K=4), seed=9),
                       p, collect_states=True)
    b = run_experiment(RunConfig(algorithm="sgd", T=20,
                                 trainer=trainer(eta=0.05, theta=0.9, K=4), seed=9),
                       p, collect_states=True)
    assert np.array_equal(a.history, b.history)


def test_fedavg_homogeneous_noiseless_is_batch_gd():
    p = make_quadratic(4, 3, heterogeneity=0.0, noise_sigma=0.0, seed=10)
    res = run_experiment(RunConfig(algorithm="fedavg", T=15,
                                   trainer=trainer(eta=0.1), seed=0), p,
                         collect_states=True)
    x = np.zeros(3)
    for t in range(15):
        x = x - 0.1 * p.global_grad(x)
        assert np.max(np.abs(res.history[t + 1][0] - x)) < 1e-12


def test_dsgd_descends_on_noiseless_quadratic():
    p = make_quadratic(8, 6, heterogeneity=0.3, noise_sigma=0.0, seed=11)
    mix = metropolis_hastings(build_ring(8))
    res = run_experiment(RunConfig(algorithm="dsgd", T=100, trainer=trainer(eta=0.05),
                                   seed=1, mixing=mix), p)
    f = [r.f_avg for r in res.records]
    assert all(a > b for a, b in zip(f, f[1:]))


def test_quantized_zero_delta_keeps_consensus_state():
    # zero gradients from a consensus state: all codes are 0 and the fleet is
    # unchanged (up to gossip rounding on the shared vector)
    problem = FixedGradientProblem(np.zeros((4, 3)))
    mix = metropolis_hastings(build_ring(4))
    spec = QuantizerSpec(s=0.5, b=8, rule="deterministic")
    shared = np.array([1.5, -0.25, 0.75])
    states = [ClientState(i, shared.copy()) for i in range(4)]
    out = round_dfedavgm_quantized(states, mix, trainer(), spec, problem, t=0, seed=0)
    for after in out:
        assert np.allclose(after.x, shared, rtol=0, atol=1e-15)


def test_quantized_hand_walk_two_clients():
    # both deltas (2.7, -0.3); floor codes decode to (2, -1); each client adds
    # 0.5*(own) + 0.5*(peer) = (2, -1)
    problem = FixedGradientProblem(np.tile([-2.7, 0.3], (2, 1)))
    mix = averaging_matrix(2)
    spec = QuantizerSpec(s=1.0, b=8, rule="deterministic")
    states = [ClientState(0, np.zeros(2)), ClientState(1, np.zeros(2))]
    out = round_dfedavgm_quantized(states, mix, trainer(eta=1.0), spec, problem,
                                   t=0, seed=0)
    for s in out:
        assert np.allclose(s.x, np.array([2.0, -1.0]), atol=1e-15)


def test_quantized_matches_unquantized_at_tiny_step():
    p = make_quadratic(6, 8, heterogeneity=0.3, noise_sigma=0.0, seed=12, center_scale=0.5)
    mix = metropolis_hastings(build_ring(6))
    tr = trainer(eta=3e-4, theta=0.0, K=2)
    spec = QuantizerSpec(s=1e-12, b=32, rule="deterministic")
    plain = run_experiment(RunConfig(algorithm="dfedavgm", T=40, trainer=tr, seed=2,
                                     mixing=mix), p, collect_states=True)
    quant = run_experiment(RunConfig(algorithm="dfedavgm_quantized", T=40, trainer=tr,
                                     seed=2, mixing=mix, quantizer=spec),
                           p, collect_states=True)
    gap = np.max(np.abs(plain.history - quant.history))
    assert gap <= 1e-6


def test_bits_accounting_all_algorithms():
    m, d, T, b = 6, 7, 9, 8
    p = make_quadratic(m, d, heterogeneity=0.2, noise_sigma=0.1, seed=13)
    ring = metropolis_hastings(build_ring(m))
    spec = QuantizerSpec(s=0.01, b=b, rule="stochastic", seed=1)
    tr = trainer(eta=1e-4, K=2)
    directed = int(ring.degrees.sum())
    cases = {
        "dfedavgm": (dict(mixing=ring), T * 32 * d * directed),
        "dsgd": (dict(mixing=ring), T * 32 * d * directed),
        "dfedavgm_quantized": (dict(mixing=ring, quantizer=spec), T * (32 + d * b) * directed),
        "fedavg": ({}, T * 2 * 32 * d * m),
        "sgd": ({}, 0),
    }
    for algo, (extra, expected) in cases.items():
        cfg = RunConfig(algorithm=algo, T=T, trainer=tr, seed=3, **extra)
        res = run_experiment(cfg, p)
        assert res.records[-1].bits_total == expected, algo
        assert res.records[-1].bits_total == expected_total_bits(
            algo, T, d, mixing=ring if extra.get("mixing") else None, m=m, b=b)
        bits = [r.bits_total for r in res.records]
        assert all(x <= y for x, y in zip(bits, bits[1:]))


def test_t_zero_single_record():
    p = make_quadratic(3, 4, heterogeneity=0.5, noise_sigma=0.0, seed=14)
    res = run_experiment(RunConfig(algorithm="fedavg", T=0, trainer=trainer(), seed=0), p)
    assert len(res.records) == 1
    rec = res.records[0]
    assert rec.t == 0
    assert rec.bits_total == 0
    assert rec.f_avg == pytest.approx(p.global_loss(np.zeros(4)))
    assert rec.consensus == 0.0


def test_replay_is_deterministic():
    p = make_quadratic(5, 6, heterogeneity=0.4, noise_sigma=0.9, seed=15)
    mix = metropolis_hastings(build_ring(5))
    cfg = RunConfig(algorithm="dfedavgm", T=12, trainer=trainer(eta=0.02, theta=0.8, K=3),
                    seed=21, mixing=mix)
    a = run_experiment(cfg, p)
    b = run_experiment(cfg, p)
    for ra, rb in zip(a.records, b.records):
        assert ra.f_avg == rb.f_avg
        assert ra.grad_norm_sq == rb.grad_norm_sq
        assert ra.consensus == rb.consensus
        assert ra.bits_total == rb.bits_total
    assert np.array_equal(a.final_x, b.final_x)


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
@pytest.mark.filterwarnings("ignore:stepsize")
def test_divergence_aborts_with_partial_records():
    p = make_quadratic(4, 3, heterogeneity=0.5, noise_sigma=0.0, seed=16)
    mix = metropolis_hastings(build_ring(4))
    cfg = RunConfig(algorithm="dfedavgm", T=50, trainer=trainer(eta=1e150), seed=0,
                    mixing=mix)
    with pytest.raises(DivergenceError) as err:
        run_experiment(cfg, p)
    assert err.value.records is not None
    assert len(err.value.records) >= 1


def test_consensus_matches_helper():
    p = make_quadratic(6, 4, heterogeneity=1.0, noise_sigma=0.5, seed=17)
    mix = metropolis_hastings(build_ring(6))
    res = run_experiment(RunConfig(algorithm="dfedavgm", T=5,
                                   trainer=trainer(eta=0.05), seed=2, mixing=mix),
                         p, collect_states=True)
    for t, rec in enumerate(res.records):
        assert rec.consensus == pytest.approx(consensus_distance(res.history[t]), abs=1e-15)


def test_records_csv_round_trip():
    p = make_quadratic(3, 3, heterogeneity=0.2, noise_sigma=0.3, seed=18)
    mix = metropolis_hastings(build_ring(3))
    res = run_experiment(RunConfig(algorithm="dsgd", T=4, trainer=trainer(eta=0.04),
                                   seed=4, mixing=mix), p)
    text = records_to_csv(res.records)
    assert text.splitlines()[0] == CSV_HEADER
    back = records_from_csv(text)
    assert back == res.records
    jsonl = records_to_jsonl(res.records)
    assert len(jsonl.strip().splitlines()) == len(res.records)


def test_checkpoint_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal((5, 7))
    path = tmp_path / "snap.bin"
    save_checkpoint(path, x)
    raw = path.read_bytes()
    assert raw[:8] == b"DFEDSNAP"
    assert int.from_bytes(raw[8:12], "little") == 5
    assert int.from_bytes(raw[12:16], "little") == 7
    assert len(raw) == 16 + 5 * 7 * 8
    assert np.array_equal(load_checkpoint(path), x)


def test_checkpoints_written_at_interval(tmp_path):
    p = make_quadratic(3, 4, heterogeneity=0.2, noise_sigma=0.1, seed=19)
    mix = metropolis_hastings(build_ring(3))
    cfg = RunConfig(algorithm="dfedavgm", T=6, trainer=trainer(eta=0.01), seed=1,
                    mixing=mix)
    run_experiment(cfg, p, checkpoint_every=2, checkpoint_dir=str(tmp_path))
    files = sorted(f.name for f in tmp_path.iterdir())
    assert files == ["round000002.bin", "round000004.bin", "round000006.bin"]


def test_quantized_consensus_within_lemma_shape():
    # steady quantized consensus <= 2 C2 eta^2/(1-lam) + 2 d s^2/(1-lam)
    m, d, T = 8, 10, 300
    p = make_quadratic(m, d, heterogeneity=1.0, noise_sigma=1.0, seed=23,
                       mu=0.25, L=1.0)
    ring = metropolis_hastings(build_ring(m))
    tr = trainer(eta=0.02, theta=0.5, K=3)
    spec = QuantizerSpec(s=1e-3, b=16, rule="stochastic", seed=7)
    from dfedsim.theory import theorem1_constants

    res = run_experiment(RunConfig(algorithm="dfedavgm_quantized", T=T,
                                   trainer=tr, seed=5, mixing=ring,
                                   quantizer=spec), p)
    steady = np.mean([r.consensus for r in res.records if r.t > T // 2])
    c = theorem1_constants(tr.K, tr.eta, tr.theta, p.L, p.sigma_l, p.sigma_g,
                           res.max_local_grad_norm, ring.lam)
    bound = 2.0 * c.C2 * tr.eta**2 / (1.0 - ring.lam) + 2.0 * d * spec.s**2 / (1.0 - ring.lam)
    assert steady <= bound


def test_trajectory_csv_dump():
    from dfedsim.local_training import run_local, trajectory_to_csv

    p = make_quadratic(2, 4, heterogeneity=0.5, noise_sigma=0.2, seed=29)
    traj = run_local(np.zeros(4), 1, 3, trainer(eta=0.05, K=3), p, seed=8)
    text = trajectory_to_csv(traj, round_index=3, client=1, problem=p)
    lines = text.strip().splitlines()
    assert lines[0] == "round,client,k,y_norm,f_i,step_norm"
    assert len(lines) == 1 + 4  # y^0..y^3
    first = lines[1].split(",")
    assert first[:3] == ["3", "1", "0"]
    assert float(first[5]) == 0.0


def test_mlp_fleet_trains_from_custom_init():
    # zero init is a saddle for tanh nets, so the engine accepts an override
    from dfedsim.problems import make_tiny_mlp

    p = make_tiny_mlp(4, (4, 8, 3), 30, "iid", seed=33, batch_size=10)
    mix = metropolis_hastings(build_ring(4))
    cfg = RunConfig(algorithm="dfedavgm", T=30,
                    trainer=trainer(eta=0.05, theta=0.5, K=2), seed=2, mixing=mix)
    res = run_experiment(cfg, p, init_x=p.suggested_init(seed=1))
    assert res.records[-1].f_avg < res.records[0].f_avg
    assert np.isfinite(res.final_x).all()


def test_logistic_reduction_pair_bitwise():
    p = make_logistic(6, 5, 20, "iid", seed=20, batch_size=4)
    mix = metropolis_hastings(build_ring(6))
    a = run_experiment(RunConfig(algorithm="dsgd", T=20, trainer=trainer(eta=0.1),
                                 seed=6, mixing=mix), p, collect_states=True)
    b = run_experiment(RunConfig(algorithm="dfedavgm", T=20,
                                 trainer=trainer(eta=0.1, theta=0.0, K=1),
                                 seed=6, mixing=mix), p, collect_states=True)
    assert np.array_equal(a.history, b.history)
