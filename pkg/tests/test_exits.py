import numpy as np
import pytest

from moticomp.autodiff import Tape
from moticomp.errors import ConfigError, ShapeError
from moticomp.exits import (ExitDecision, FlopsReport, TendencyStats, branch_exit_macs, count_flops,
                            gc_layer_macs, gumbel_softmax_st, init_policy,
                            policy_forward, tendency_counts, tendency_loss,
                            _policy_forward)
from moticomp.layers import bind
from moticomp.motion import LOWER, UPPER, PartLayout, Skeleton
from moticomp.predictor import PredictorConfig, _branch_encode, init_predictor


def toy_predictor(seed=0):
    sk = Skeleton(parent=(0, 0, 0, 2), part_of=(LOWER, LOWER, UPPER, UPPER))
    layout = PartLayout.from_skeleton(sk)
    config = PredictorConfig(input_frames=8, output_frames=4, feature_width=8,
                             heads=2, policy_hidden=6, query_dim=5,
                             coeff_scale=10.0)
    return init_predictor(np.random.default_rng(seed), layout, config)


class TestPolicyForward:
    def test_zero_head_gives_zero_logits(self):
        params = init_policy(np.random.default_rng(0), 8, 6, 3)
        x = np.random.default_rng(1).normal(size=(5, 8))
        assert np.array_equal(policy_forward(params, x), np.zeros(3))

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        params = init_policy(rng, 8, 6, 3)
        params.w2[:] = rng.normal(size=params.w2.shape)
        x = rng.normal(size=(5, 8))
        assert np.array_equal(policy_forward(params, x), policy_forward(params, x))

    def test_matches_hand_rolled_mlp(self):
        rng = np.random.default_rng(3)
        params = init_policy(rng, 4, 5, 3)
        params.w2[:] = rng.normal(size=params.w2.shape)
        params.b2[:] = rng.normal(size=params.b2.shape)
        x = rng.normal(size=(6, 4))
        pooled = x.mean(axis=0, keepdims=True)
        expected = np.tanh(pooled @ params.w1 + params.b1) @ params.w2 + params.b2
        assert np.allclose(policy_forward(params, x), expected.reshape(-1), atol=1e-12)

    def test_width_mismatch_rejected(self):
        params = init_policy(np.random.default_rng(4), 8, 6, 3)
        with pytest.raises(ShapeError):
            policy_forward(params, np.zeros((5, 7)))


class TestGumbelSoftmaxSt:
    def test_dominant_logit_selected(self):
        decision = gumbel_softmax_st(np.array([10.0, 0.0, 0.0]), 1.0, np.zeros(3))
        assert np.array_equal(decision.b, [1.0, 0.0, 0.0])
        assert decision.exit_index == 1

    def test_tie_breaks_to_lowest_index(self):
        decision = gumbel_softmax_st(np.zeros(4), 1.0, np.zeros(4))
        assert np.array_equal(decision.b, [1.0, 0.0, 0.0, 0.0])

    def test_noise_moves_selection(self):
        noise = np.array([0.0, 5.0, 0.0])
        decision = gumbel_softmax_st(np.zeros(3), 1.0, noise)
        assert decision.exit_index == 2

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ConfigError):
            gumbel_softmax_st(np.zeros(3), 0.0, np.zeros(3))

    def test_always_one_hot(self):
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            logits = rng.normal(scale=3.0, size=4)
            noise = rng.gumbel(size=4)
            decision = gumbel_softmax_st(logits, 1.0, noise)
            assert decision.b.sum() == 1.0
            assert np.all((decision.b == 0.0) | (decision.b == 1.0))

    def test_temperature_limit_sharpens_soft(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=5)
        noise = rng.gumbel(size=5)
        decision = gumbel_softmax_st(logits, 1e-3, noise)
        assert np.abs(decision.soft - decision.b).max() < 1e-6

    def test_selection_frequencies_near_uniform(self):
        rng = np.random.default_rng(7)
        n, d = 100_000, 3
        # batched rows exercise the same softmax/straight-through kernel
        tape = Tape()
        logits = tape.constant(np.zeros((n, d)))
        perturbed = tape.add(logits, tape.constant(rng.gumbel(size=(n, d))))
        hard = tape.straight_through(tape.softmax_lastdim(perturbed))
        freq = hard.values.mean(axis=0)
        assert np.abs(freq - 1.0 / d).max() < 0.02

    def test_straight_through_gradient_matches_soft_path(self):
        rng = np.random.default_rng(8)
        c = rng.normal(size=(1, 3))
        logits = rng.normal(size=(1, 3))
        noise = rng.gumbel(size=(1, 3))

        def grads(hard_path: bool) -> np.ndarray:
            from moticomp.exits import _gumbel_softmax_st
            tape = Tape()
            x = tape.leaf(logits, requires_grad=True)
            b, soft = _gumbel_softmax_st(tape, x, 1.0, noise)
            target = b if hard_path else soft
            weighted = tape.hadamard(target, tape.constant(c))
            tape.backward(tape.scale(tape.mean(weighted), weighted.size))
            return x.grad.copy()

        assert np.array_equal(grads(True), grads(False))


class TestTendency:
    def make_decisions(self, indices, n_exits=3):
        out = []
        for idx in indices:
            soft = np.full(n_exits, 0.1)
            soft[idx] = 1.0
            soft /= soft.sum()
            b = np.zeros(n_exits)
            b[idx] = 1.0
            out.append(ExitDecision(b=b, soft=soft, temperature=1.0))
        return out

    def test_all_first_exit(self):
        batch, branches = 10, 3
        decisions = self.make_decisions([0] * (batch * branches))
        stats = tendency_counts(decisions)
        assert np.array_equal(stats.counts, [30, 0, 0])

    def test_balanced_counts(self):
        decisions = self.make_decisions([0, 1, 2] * 5)
        stats = tendency_counts(decisions)
        assert np.array_equal(stats.counts, [5, 5, 5])

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(9)
        indices = list(rng.integers(0, 3, size=200))
        stats = tendency_counts(self.make_decisions(indices))
        expected = [indices.count(d) for d in range(3)]
        assert np.array_equal(stats.counts, expected)
        assert stats.counts.sum() == 200

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            tendency_counts([])

    def test_loss_zero_iff_equal(self):
        assert tendency_loss(TendencyStats(counts=[10, 10, 10])) == 0.0
        rng = np.random.default_rng(10)
        for _ in range(50):
            counts = rng.integers(0, 40, size=3)
            if counts.sum() == 0:
                continue
            loss = tendency_loss(TendencyStats(counts=counts))
            if counts[0] == counts[1] == counts[2]:
                assert loss == 0.0
            else:
                assert loss > 0.0

    def test_concentrated_counts_closed_form(self):
        # counts (3B, 0, 0): population std 10*sqrt(2) at B=10, mean 10, CV sqrt(2)
        stats = TendencyStats(counts=[30, 0, 0], w_tendency=1.0)
        assert tendency_loss(stats) == pytest.approx(np.sqrt(2.0), abs=1e-12)
        stats_w = TendencyStats(counts=[30, 0, 0], w_tendency=0.5)
        assert tendency_loss(stats_w) == pytest.approx(0.5 * np.sqrt(2.0), abs=1e-12)

    def test_matches_spreadsheet_cv(self):
        rng = np.random.default_rng(11)
        counts = rng.integers(1, 50, size=4)
        mean = counts.mean()
        std = np.sqrt(((counts - mean) ** 2).mean())
        stats = TendencyStats(counts=counts, w_tendency=0.5)
        assert tendency_loss(stats) == pytest.approx(0.5 * std / mean, rel=1e-12)

    def test_all_zero_counts_rejected(self):
        with pytest.raises(ValueError):
            tendency_loss(TendencyStats(counts=[0, 0, 0]))


class TestFlops:
    def test_single_layer_closed_form(self):
        assert gc_layer_macs(4, 8, 8) == 4 * 4 * 8 + 4 * 8 * 8 == 384

    def test_monotone_in_exit_depth(self):
        params = toy_predictor()
        for branch in params.branches:
            counts = branch_exit_macs(branch, params.config)
            assert counts[0] < counts[1] < counts[2]

    def test_exit_one_cheaper_than_exit_three(self):
        params = toy_predictor()
        shallow = count_flops(params, (1, 1, 1))
        deep = count_flops(params, (3, 3, 3))
        assert shallow.weighted_average_total() < deep.weighted_average_total()
        assert deep.weighted_average_total() == deep.full_depth_total()

    def test_analytic_matches_instrumented_tape(self):
        # oracle: replay the branch forward and recount MACs from node shapes
        params = toy_predictor(seed=1)
        rng = np.random.default_rng(12)
        policy = init_policy(rng, params.config.feature_width,
                             params.config.policy_hidden, params.config.n_blocks)
        for branch in params.branches:
            analytic = branch_exit_macs(branch, params.config)
            for exit_index in (1, 2, 3):
                tape = Tape()
                tensors = bind(tape, params.named_parameters(), trainable=False)
                tensors.update(bind(
                    tape, {f"pol.{k}": v for k, v in policy.named_parameters().items()},
                    trainable=False))
                x = tape.constant(rng.normal(
                    size=(branch.node_count, params.config.resolved_n_coeffs)))
                encoded = _branch_encode(tape, tensors, branch.kind, x)
                _policy_forward(tape, tensors, "pol", encoded)
                from moticomp.predictor import _branch_tail
                _branch_tail(tape, branch, tensors, encoded, exit_index)
                counted = 0
                for node in tape.nodes:
                    if node.kind == "matmul":
                        a = tape.tensors[node.input_ids[0]]
                        b = tape.tensors[node.input_ids[1]]
                        counted += a.shape[0] * a.shape[1] * b.shape[1]
                assert counted == analytic[exit_index - 1], (branch.kind, exit_index)

    def test_report_validates_monotonicity(self):
        with pytest.raises(ValueError):
            FlopsReport(branch_names=("a",), counts={"a": (5, 5, 6)},
                        exit_distribution={"a": (1.0, 0.0, 0.0)})

    def test_csv_shape(self):
        params = toy_predictor()
        report = count_flops(params, (1, 2, 3))
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "branch,exit_1,exit_2,exit_3"
        assert len(lines) == 5  # header + 3 branches + summary
        assert lines[-1].startswith("weighted_average,")

    def test_distribution_must_sum_to_one(self):
        params = toy_predictor()
        report = count_flops(params, (1, 1, 1))
        with pytest.raises(ValueError):
            report.with_distribution({k: (0.5, 0.0, 0.0) for k in report.branch_names})
