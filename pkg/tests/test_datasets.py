import json

import numpy as np
import pytest

from symode import expressions as ex
from symode.datasets import (
    DatasetSample,
    Discard,
    DiscardSignal,
    GenConfig,
    apply_noise,
    build_sample,
    compute_derivatives,
    generate_dataset,
    read_dataset,
    read_manifest,
    sample_system,
    sample_to_record,
    vocab_for,
)
from symode.integrate import Trajectory


class TestSampleSystem:
    def test_deterministic(self):
        config = GenConfig()
        assert sample_system(config, 99) == sample_system(config, 99)
        assert sample_system(config, 99) != sample_system(config, 100)

    def test_depth_zero_forces_variable_leaves(self):
        config = GenConfig(d_max=2, dimension_weights=(1, 1), max_depth=0)
        for seed in range(30):
            system = sample_system(config, seed)
            for eq in system.equations:
                assert eq.op == "var"

    def test_every_equation_contains_a_variable(self):
        config = GenConfig()
        for seed in range(200):
            for eq in sample_system(config, seed).equations:
                assert ex.free_variables(eq)

    def test_respects_operator_restriction(self):
        config = GenConfig(
            d_max=1,
            dimension_weights=(1.0,),
            binary_ops=("add", "mul"),
            unary_ops=("pow2",),
            max_depth=2,
        )
        allowed = {"add", "mul", "pow2", "var", "const"}

        def ops(e):
            yield e.op
            for a in e.args:
                yield from ops(a)

        for seed in range(100):
            for eq in sample_system(config, seed).equations:
                assert set(ops(eq)) <= allowed

    def test_dimension_law_frequencies(self):
        config = GenConfig()
        weights = np.array(config.dimension_weights, dtype=float)
        expected = weights / weights.sum()
        counts = np.zeros(4)
        n = 10_000
        for seed in range(n):
            counts[sample_system(config, seed).dimension - 1] += 1
        assert np.all(np.abs(counts / n - expected) <= 0.03)

    def test_depth_and_budget_caps(self):
        config = GenConfig(max_depth=3, max_binary_ops=2)

        def count_binary(e):
            return (e.op in ("add", "sub", "mul", "div")) + sum(count_binary(a) for a in e.args)

        for seed in range(100):
            for eq in sample_system(config, seed).equations:
                assert ex.depth(eq) <= 3
                assert count_binary(eq) <= 2

    def test_constants_are_quantized(self):
        config = GenConfig(mantissa_digits=2)
        vocab = vocab_for(config)

        def constants(e):
            if e.op == "const":
                yield e.value
            for a in e.args:
                yield from constants(a)

        for seed in range(100):
            for eq in sample_system(config, seed).equations:
                for c in constants(eq):
                    assert vocab.quantize(c) == c


class TestComputeDerivatives:
    def test_rotation_truth_single_point(self):
        system = ex.OdeSystem((ex.neg(ex.var(1)), ex.var(0)))
        traj = Trajectory(times=np.array([0.0, 1.0]), states=np.array([[1.0, 0.0], [0.0, 1.0]]))
        derivs = compute_derivatives(system, traj)
        assert np.allclose(derivs[0], [0.0, 1.0])

    def test_constant_system(self):
        system = ex.OdeSystem((ex.const(2.5),))
        traj = Trajectory(times=np.linspace(0, 1, 5), states=np.ones((5, 1)))
        assert np.all(compute_derivatives(system, traj) == 2.5)

    def test_singularity_raises_discard_signal(self):
        system = ex.OdeSystem((ex.div(ex.const(1.0), ex.var(0)),))
        traj = Trajectory(times=np.linspace(0, 1, 3), states=np.array([[1.0], [0.0], [-1.0]]))
        with pytest.raises(DiscardSignal) as info:
            compute_derivatives(system, traj)
        assert info.value.reason == "non-finite"

    def test_recomputable_equals_stored(self, toy_config):
        sample = None
        seed = 0
        while sample is None:
            result = build_sample(toy_config, seed)
            seed += 1
            if isinstance(result, DatasetSample):
                sample = result
        again = compute_derivatives(sample.system, sample.trajectory)
        assert np.array_equal(again, sample.derivatives)


class TestApplyNoise:
    def traj(self):
        return Trajectory(times=np.linspace(0, 1, 50), states=np.random.default_rng(0).uniform(1, 2, (50, 3)))

    def test_sigma_zero_is_identity(self):
        traj = self.traj()
        assert apply_noise(traj, 0.0, 1) is traj

    def test_deterministic_given_seed(self):
        traj = self.traj()
        a = apply_noise(traj, 0.05, 7)
        b = apply_noise(traj, 0.05, 7)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, apply_noise(traj, 0.05, 8).states)

    def test_multiplicative_law_std(self):
        rng = np.random.default_rng(2)
        states = rng.uniform(0.5, 3.0, (20_000, 5))  # 1e5 state entries
        traj = Trajectory(times=np.arange(20_000, dtype=float), states=states)
        sigma = 0.05
        noisy = apply_noise(traj, sigma, 3)
        ratio = noisy.states / traj.states - 1.0
        assert abs(ratio.std() - sigma) / sigma <= 0.01
        assert abs(ratio.mean()) <= 1e-3

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            apply_noise(self.traj(), -0.1, 0)


class TestBuildSample:
    def test_oscillator_family_accepts(self):
        config = GenConfig(
            d_max=1,
            dimension_weights=(1.0,),
            binary_ops=("mul",),
            unary_ops=(),
            max_depth=2,
            n_points=50,
            t_span=5.0,
        )
        accepted = sum(
            isinstance(build_sample(config, seed), DatasetSample) for seed in range(20)
        )
        assert accepted >= 10

    def test_explosive_family_discards_with_reasons(self):
        config = GenConfig(
            d_max=1,
            dimension_weights=(1.0,),
            binary_ops=(),
            unary_ops=("exp",),
            max_depth=4,
            unary_prob=1.0,
            n_points=50,
            ic_tries=2,
        )
        reasons = set()
        for seed in range(30):
            result = build_sample(config, seed)
            if isinstance(result, Discard):
                reasons.add(result.reason)
        assert reasons <= {"integration-error", "timeout", "non-finite", "too-short"}
        assert reasons

    def test_accepted_sample_is_finite_and_consistent(self, toy_config):
        for seed in range(40):
            result = build_sample(toy_config, seed)
            if isinstance(result, DatasetSample):
                assert np.all(np.isfinite(result.trajectory.states))
                assert np.all(np.isfinite(result.derivatives))
                assert len(result.derivatives) == result.trajectory.n_points
                assert result.sigma in toy_config.noise_levels

    def test_deterministic(self, toy_config):
        a, b = build_sample(toy_config, 5), build_sample(toy_config, 5)
        assert type(a) is type(b)
        if isinstance(a, DatasetSample):
            assert a.system == b.system
            assert np.array_equal(a.noisy_trajectory.states, b.noisy_trajectory.states)


class TestGenerateDataset:
    def test_count_zero_writes_empty_file(self, toy_config, tmp_path):
        out = tmp_path / "empty.jsonl"
        summary = generate_dataset(toy_config, 0, out, base_seed=0)
        assert out.read_bytes() == b""
        assert summary.attempts == 0 and summary.accepted == 0 and summary.discarded == {}

    def test_worker_counts_agree_byte_for_byte(self, toy_config, tmp_path):
        out1, out8 = tmp_path / "w1.jsonl", tmp_path / "w8.jsonl"
        s1 = generate_dataset(toy_config, 20, out1, base_seed=3, workers=1)
        s8 = generate_dataset(toy_config, 20, out8, base_seed=3, workers=8)
        assert out1.read_bytes() == out8.read_bytes()
        assert s1 == s8

    def test_file_scan_all_finite_and_manifest(self, toy_config, tmp_path):
        out = tmp_path / "data.jsonl"
        summary = generate_dataset(toy_config, 30, out, base_seed=11)
        records = read_dataset(out)
        assert len(records) == 30 == summary.accepted
        vocab = vocab_for(toy_config)
        for record in records:
            assert record["version"] == 1
            assert record["vocab_hash"] == vocab.hash
            for field in ("times", "states", "derivatives"):
                assert np.all(np.isfinite(np.asarray(record[field])))
            assert len(record["states"]) == len(record["derivatives"]) == toy_config.n_points
            vocab.decode_system([str(t) for t in record["system_tokens"]])
        manifest = read_manifest(out)
        assert manifest["summary"]["accepted"] == 30
        assert manifest["summary"]["attempts"] == summary.attempts
        assert manifest["vocab"]["hash"] == vocab.hash
        assert sum(manifest["summary"]["discarded"].values()) + 30 == summary.attempts

    def test_attempt_seeds_are_base_plus_index(self, toy_config, tmp_path):
        out = tmp_path / "seeded.jsonl"
        generate_dataset(toy_config, 10, out, base_seed=100)
        seeds = [r["seed"] for r in read_dataset(out)]
        assert seeds == sorted(seeds)
        assert all(s >= 100 for s in seeds)
        # every record reproducible from its recorded seed
        vocab = vocab_for(toy_config)
        for record in read_dataset(out)[:3]:
            rebuilt = build_sample(toy_config, record["seed"])
            assert isinstance(rebuilt, DatasetSample)
            assert json.dumps(sample_to_record(rebuilt, vocab)) == json.dumps(record)


class TestNoisyStorage:
    def test_record_states_carry_the_noise(self, tmp_path):
        config = GenConfig(
            d_max=1,
            dimension_weights=(1.0,),
            max_depth=1,
            n_points=25,
            noise_levels=(0.05,),
            mantissa_digits=2,
        )
        sample = None
        seed = 0
        while sample is None:
            result = build_sample(config, seed)
            seed += 1
            if isinstance(result, DatasetSample):
                sample = result
        record = sample_to_record(sample, vocab_for(config))
        assert record["sigma"] == 0.05
        assert not np.array_equal(np.asarray(record["states"]), sample.trajectory.states)
        assert np.array_equal(np.asarray(record["states"]), sample.noisy_trajectory.states)
        # derivative labels stay clean
        assert np.array_equal(np.asarray(record["derivatives"]), sample.derivatives)
