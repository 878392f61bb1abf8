#!/usr/bin/env python

import unittest
import sys
import os
from fractions import Fraction

basedir = os.path.dirname(os.path.abspath(os.path.dirname(__file__)))
sys.path[0:0] = [os.path.join(basedir, "lib")]

import numpy as np
import numpy.testing as npt

import coding
import matrixcore
import simulator
from errors import DivergenceError, StepsizeError

def generation_roster():
    return coding.ClientRoster.from_multipliers(5, [2, 2, 1, 1, 1, 1, 1])

class TestSimulation(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(31)

    def assertFractions(self, actual, expected):
        self.assertEqual(dict((c, Fraction(f)) for c, f in expected.items()), actual)

class TestTransfers(TestSimulation):
    def test_block_sends(self):
        roster = coding.ClientRoster.homogeneous(18, 2, base_width=100)
        proposed = coding.build_plan("proposed", roster, 0)
        dense = coding.build_plan("dense", roster, 0)
        comm = simulator.CommModel(block_rows=1200)
        first = simulator.simulate_round(proposed, roster, simulator.TimingModel(), comm, 1)
        second = simulator.simulate_round(dense, roster, simulator.TimingModel(), comm, 1)
        self.assertEqual((first.raw_block_transfers, first.coded_block_transfers), (36, 2))
        self.assertEqual(first.block_sends, 38)
        self.assertEqual(second.block_sends, 342)
        self.assertLess(5 * first.total_bytes_d2d, second.total_bytes_d2d)
        self.assertGreaterEqual(second.comm_delay / first.comm_delay, 5.0)

    def test_delay_ordering(self):
        roster = coding.ClientRoster.homogeneous(18, 2)
        proposed = coding.build_plan("proposed", roster, 0)
        dense = coding.build_plan("dense", roster, 0)
        for latency, per_byte in [(0, 0), (0.5, 0), (0, 1e-3), (0.01, 1e-8)]:
            comm = simulator.CommModel(latency=latency, per_byte=per_byte, block_rows=50)
            self.assertLessEqual(comm.delay(proposed.transfers, 10),
                                 comm.delay(dense.transfers, 10))

    def test_receive_bound(self):
        roster = generation_roster()
        plan = coding.build_plan("proposed", roster, 0)
        for client in roster:
            received = [t for t in plan.raw_transfers() if t.dest == client.id]
            self.assertLessEqual(len(received), plan.s * client.multiplier)
        self.assertEqual(len(coding.build_plan("dense", roster, 0).raw_transfers()),
                         sum(1 for block in range(7) for client in roster
                             if plan.generator(block) != client.id))

    def test_negative_cost(self):
        self.assertRaises(ValueError, simulator.CommModel, latency=-1)

class TestRound(TestSimulation):
    def test_noiseless_completion(self):
        roster = coding.ClientRoster.homogeneous(10, 2, base_width=4, base_speed=2.0)
        plan = coding.build_homogeneous_plan(10, 2)
        comm = simulator.CommModel(latency=0.1, per_byte=0.0)
        timing = simulator.TimingModel(noise=False)
        times = set()
        for seed in range(3):
            report = simulator.simulate_round(plan, roster, timing, comm, seed)
            self.assertEqual(report.decode_status, simulator.OK)
            times.add(report.completion_time)
        # client 0 sends A_0 twice and one coded block: three sends of 0.1
        self.assertEqual(len(times), 1)
        self.assertAlmostEqual(times.pop(), 4 / 2.0 + 0.3, places=12)

    def test_stragglers(self):
        roster = coding.ClientRoster.homogeneous(10, 2, base_width=5)
        plan = coding.build_homogeneous_plan(10, 2, rng_seed=2)
        A = self.rng.standard_normal((40, 50))
        workload = coding.encode(matrixcore.equal_partition(A, 10), plan)
        x = self.rng.standard_normal(40)
        comm = simulator.CommModel(block_rows=40)

        report = simulator.simulate_round(plan, roster, simulator.TimingModel(stragglers=[3, 7]),
                                          comm, 4, workload, x)
        self.assertEqual(report.decode_status, simulator.OK)
        self.assertNotIn(3, report.arrival)
        self.assertNotIn(7, report.arrival)
        npt.assert_allclose(report.result.concat(), A.T @ x, rtol=1e-8, atol=1e-10)

        report = simulator.simulate_round(plan, roster,
                                          simulator.TimingModel(stragglers=[1, 2, 11]),
                                          comm, 4, workload, x)
        self.assertEqual(report.decode_status, simulator.INSUFFICIENT)
        self.assertIsNone(report.completion_time)
        self.assertEqual(report.row()[simulator.SimReport.COLUMNS.index("stragglers")],
                         "W1 W2 W11")

    def test_slowdown(self):
        roster = coding.ClientRoster.homogeneous(4, 1)
        plan = coding.build_homogeneous_plan(4, 1)
        timing = simulator.TimingModel(noise=False, stragglers=[0], slowdown=10.0)
        report = simulator.simulate_round(plan, roster, timing, simulator.CommModel(), 0)
        self.assertEqual(report.decode_status, simulator.OK)
        self.assertEqual(report.arrival[-1], 0)
        self.assertEqual(report.compute_times[0], 10.0)

    def test_coupled_clients(self):
        roster = generation_roster()
        plan = coding.build_plan("proposed", roster, 0)
        timing = simulator.TimingModel(straggler_probability=0.3)
        for seed in range(20):
            report = simulator.simulate_round(plan, roster, timing, simulator.CommModel(), seed)
            for client in report.stragglers:
                for worker in plan.workers_of(client):
                    self.assertNotIn(worker, report.arrival)
            # arrivals come in whole clients
            owners = [plan.specs[w].owner_client for w in report.arrival]
            for client in set(owners):
                self.assertEqual(owners.count(client), len(plan.workers_of(client)))

    def test_strong_clients_run_sequentially(self):
        roster = generation_roster()
        plan = coding.build_plan("proposed", roster, 0)
        timing = simulator.TimingModel(noise=False)
        report = simulator.simulate_round(plan, roster, timing, simulator.CommModel(), 0)
        # two workers at twice the speed take as long as one at base speed
        self.assertEqual(report.compute_times[0], report.compute_times[2])

    def test_rank_deficient_round(self):
        data = coding.build_homogeneous_plan(4, 1, rng_seed=3).to_dict()
        data["specs"][4]["coeffs"] = list(data["specs"][0]["coeffs"])
        plan = coding.CodingPlan.from_dict(data)
        roster = coding.ClientRoster.homogeneous(4, 1)
        timing = simulator.TimingModel(noise=False, stragglers=[3],
                                       per_type={0: (1.0, None)})
        report = simulator.simulate_round(plan, roster, timing, simulator.CommModel(), 0)
        self.assertEqual(report.decode_status, simulator.RANK_DEFICIENT)

    def test_per_type_parameters(self):
        roster = generation_roster()
        timing = simulator.TimingModel(shift=2.0, rate=4.0, per_type={1: (None, 8.0)})
        self.assertEqual(timing.parameters(roster.client(5), roster), (2.0, 4.0))
        self.assertEqual(timing.parameters(roster.client(0), roster), (2.0, 8.0))
        timing = simulator.TimingModel(per_type={0: (5.0, None)})
        self.assertEqual(timing.parameters(roster.client(5), roster), (5.0, 0.2))
        self.assertEqual(timing.parameters(roster.client(0), roster), (0.5, 2.0))

class TestPrivacy(TestSimulation):
    def test_raw_exposure_bound(self):
        rosters = [coding.ClientRoster.homogeneous(10, 2),
                   coding.ClientRoster.homogeneous(7, 2),
                   coding.ClientRoster.homogeneous(4, 1),
                   coding.ClientRoster.homogeneous(3, 0),
                   generation_roster(),
                   coding.ClientRoster.from_multipliers(4, [3, 2, 1, 1, 2, 1]),
                   coding.ClientRoster.from_multipliers(3, [2, 1, 1, 1])]
        for roster in rosters:
            k_bar, s_bar, _ = coding.expand_heterogeneous(roster)
            plan = coding.build_plan("proposed", roster, 0)
            exposure = simulator.privacy_report(plan, roster)
            dense = simulator.privacy_report(coding.build_plan("dense", roster, 0), roster)
            for client in roster:
                own = client.multiplier if client.role == coding.ACTIVE else 0
                raw = exposure.raw_fraction(client.id)
                self.assertLessEqual(raw, Fraction(own + s_bar, k_bar), roster)
                self.assertLessEqual(raw, dense.raw_fraction(client.id), roster)
                if own + s_bar < k_bar:
                    self.assertLess(raw, 1, roster)
            if roster.is_homogeneous() and k_bar > s_bar + 1:
                self.assertLess(max(exposure.raw.values()), 1, roster)

    def test_generation_roster(self):
        roster = generation_roster()
        exposure = simulator.privacy_report(coding.build_plan("proposed", roster, 0), roster)
        self.assertFractions(exposure.raw, {0: "4/7", 1: "4/7", 2: "3/7", 3: "3/7",
                                            4: "3/7", 5: 0, 6: 0})
        self.assertEqual(exposure.coded[5], Fraction(3, 7))
        for client in roster.active:
            self.assertGreaterEqual(exposure.coded[client.id], exposure.raw[client.id])

    def test_dense_sees_everything(self):
        roster = generation_roster()
        exposure = simulator.privacy_report(coding.build_plan("dense", roster, 0), roster)
        self.assertEqual(set(exposure.coded.values()), set([Fraction(1)]))

    def test_homogeneous(self):
        roster = coding.ClientRoster.homogeneous(10, 2)
        exposure = simulator.privacy_report(coding.build_plan("proposed", roster, 0), roster)
        for client in roster.active:
            self.assertEqual(exposure.raw_fraction(client.id), Fraction(3, 10))
        self.assertEqual(exposure.to_dict()["W10"],
                         {"raw_fraction": "0", "coded_support_fraction": "3/10"})

class TestSparse(TestSimulation):
    def test_dense_matrix_equal_nnz(self):
        A = self.rng.standard_normal((50, 60))
        P = matrixcore.equal_partition(A, 6)
        plans = [coding.build_homogeneous_plan(6, 2), coding.build_dense_plan(6, 8)]
        rows = simulator.sparse_compute_benchmark(P, plans, self.rng.standard_normal(50),
                                                  trials=3, warmup=1)
        self.assertEqual(rows[0].nnz, rows[1].nnz)
        self.assertEqual(rows[0].density_zeros, 0.0)

    def test_no_trials(self):
        P = matrixcore.equal_partition(np.ones((4, 4)), 2)
        self.assertEqual(simulator.sparse_compute_benchmark(
            P, [coding.build_homogeneous_plan(2, 1)], np.ones(4), trials=0), [])

    def test_nnz_and_time_ordering(self):
        roster = coding.ClientRoster.homogeneous(28, 2, base_width=500)
        densities = [0.95, 0.98, 0.99]
        results = simulator.density_sweep(2000, roster, densities, ["proposed", "dense"],
                                          trials=11, warmup=2, max_workers=4, seed=0)
        by_scheme = dict((scheme, [r for r in results if r.scheme == scheme])
                         for scheme in ("proposed", "dense"))
        for zeta, proposed, dense in zip(densities, by_scheme["proposed"], by_scheme["dense"]):
            ratio = proposed.mean_nnz / dense.mean_nnz
            predicted = (1 - zeta ** 3) / (1 - zeta ** 28)
            self.assertLessEqual(ratio, predicted * 1.05, "zeta %.2f" % zeta)
            if zeta >= 0.98:
                self.assertLessEqual(ratio, 3.0 / 28 + 0.05)
            self.assertLess(proposed.median, dense.median)
        times = [row.median for row in by_scheme["proposed"]]
        self.assertGreater(times[0], times[1])
        self.assertGreater(times[1], times[2])
        series = simulator.plot_series(results)
        self.assertEqual(series["dense"][0], [row.density_zeros for row in by_scheme["dense"]])

class TestGradientDescent(TestSimulation):
    def test_matches_uncoded(self):
        D = self.rng.standard_normal((60, 21))
        y = self.rng.standard_normal(60)
        roster = coding.ClientRoster.homogeneous(7, 2, base_width=3)
        stepsize = 0.5 * simulator.stepsize_limit(D)
        trajectory = simulator.fl_demo(D, y, roster, 100, stepsize, stragglers=2,
                                       rng_seed=5, check=True)
        self.assertEqual(len(trajectory.betas), 100)
        self.assertLessEqual(trajectory.max_deviation(), 1e-6)
        for before, after in zip(trajectory.losses, trajectory.losses[1:]):
            self.assertLessEqual(after, before)

    def test_identity(self):
        y = self.rng.standard_normal(6)
        roster = coding.ClientRoster.homogeneous(3, 1, base_width=2)
        trajectory = simulator.fl_demo(np.eye(6), y, roster, 60, 0.4, stragglers=1)
        npt.assert_allclose(trajectory.betas[-1], y, atol=1e-10)
        self.assertLess(trajectory.losses[-1], 1e-20)

    def test_zero_stepsize(self):
        D = self.rng.standard_normal((12, 6))
        roster = coding.ClientRoster.homogeneous(3, 1, base_width=2)
        beta0 = np.ones(6)
        trajectory = simulator.fl_demo(D, np.zeros(12), roster, 5, 0.0, stragglers=1,
                                       beta0=beta0)
        for beta in trajectory.betas:
            npt.assert_array_equal(beta, beta0)

    def test_stepsize_guard(self):
        D = self.rng.standard_normal((12, 6))
        roster = coding.ClientRoster.homogeneous(3, 1, base_width=2)
        limit = simulator.stepsize_limit(D)
        self.assertRaises(StepsizeError, simulator.fl_demo, D, np.zeros(12), roster, 5,
                          limit * 1.01)

    def test_divergence(self):
        error = DivergenceError(3, 1.0, 2.0)
        self.assertIn("step 3", str(error))

if __name__ == "__main__":
    unittest.main()
