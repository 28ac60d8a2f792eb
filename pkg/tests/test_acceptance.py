"""Acceptance suite: one test per release criterion, each printing a verdict.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
pass lines and timings.  Training-based criteria share one set of runs via
a module-scoped fixture.
"""

import itertools
import math
import statistics
import subprocess
import sys
import time

import numpy as np
import pytest

from slotstream import (
    AggMode,
    Rng,
    SlotMode,
    encode_batch,
    encode_full,
    finalize,
    init_state,
    merge,
    sample_slots,
)
from slotstream import modelio
from slotstream.baselines import deepsets_encode, softmax_pool_full, softmax_pool_minibatch
from slotstream.cli import main as cli_main
from slotstream.consistency import relative_discrepancy
from slotstream.models import LayerSpec, make_deepsets, make_slot_encoder, make_softmax_pool, make_stack
from slotstream import training as tr

from .oracles import column_sums_loop

MODES = list(AggMode)


def _passline(text):
    print(f"\n[PASS] {text}")


def _log_uniform_parts(rng, n):
    if n == 1:
        return 1
    hi = int(math.log2(n))
    p = min(n, 1 << rng.next_below(hi + 1))
    return max(1, min(n, p + rng.next_below(max(1, p))))


def _random_split(rng, x, parts):
    n = x.shape[0]
    perm = rng.permutation(n)
    xs = np.ascontiguousarray(x[perm])
    if parts == 1:
        return [xs]
    cuts = np.sort(rng.permutation(n - 1)[: parts - 1]) + 1
    bounds = [0, *cuts.tolist(), n]
    return [xs[a:b] for a, b in zip(bounds, bounds[1:])]


class TestCriterion1MbcExactness:
    def test_partitioned_equals_full_for_all_modes(self):
        started = time.perf_counter()
        grid = list(itertools.product([1, 2, 17, 256, 2048], [1, 8, 32], [1, 8, 64]))
        worst = 0.0
        for draw in range(50):
            n, d, k = grid[draw % len(grid)]
            mode = MODES[draw % 4]
            slot_mode = SlotMode.RANDOM if draw % 2 == 0 else SlotMode.DETERMINISTIC
            h = [1, 5, 16][draw % 3]
            a = [1, 8, 32][(draw + 1) % 3]
            params = make_slot_encoder(d, k, h, a, Rng(1000 + draw), slot_mode)
            x = Rng(2000 + draw).standard_normal(n, d)
            full = encode_full(x, params, mode, seed=draw)
            sample = sample_slots(params.slot_config, draw)
            rng = Rng(3000 + draw)
            for plan in [1, n] + [None] * 98:
                p = plan if plan is not None else _log_uniform_parts(rng, n)
                state = init_state(mode, k, a)
                for batch in _random_split(rng, x, p):
                    state = merge(state, encode_batch(batch, sample, params, mode))
                got = finalize(state)
                if mode in (AggMode.MAX, AggMode.MIN):
                    assert got.tobytes() == full.tobytes(), (draw, p, mode)
                else:
                    disc = relative_discrepancy(got, full)
                    worst = max(worst, disc)
                    assert disc <= 1e-9, (draw, p, mode, disc)
        elapsed = time.perf_counter() - started
        assert elapsed < 120.0
        _passline(
            "criterion 1 (MBC exactness): 50 draws x 100 partitions, worst sum/mean "
            f"discrepancy {worst:.2e}, max/min bitwise; {elapsed:.1f}s"
        )


class TestCriterion2Symmetries:
    def test_input_invariance_and_slot_equivariance(self):
        started = time.perf_counter()
        worst = 0.0
        for idx, (n, d, k) in enumerate([(5, 3, 2), (40, 8, 6), (150, 16, 9), (64, 4, 1)]):
            x = Rng(4000 + idx).standard_normal(n, d)
            for mode in MODES:
                params = make_slot_encoder(d, k, 7, 6, Rng(5000 + idx), SlotMode.RANDOM)
                full = encode_full(x, params, mode, seed=idx)
                rng = Rng(6000 + idx)
                for _ in range(20):
                    perm = rng.permutation(n)
                    got = encode_full(np.ascontiguousarray(x[perm]), params, mode, seed=idx)
                    if mode in (AggMode.MAX, AggMode.MIN):
                        assert got.tobytes() == full.tobytes()
                    else:
                        disc = relative_discrepancy(got, full)
                        worst = max(worst, disc)
                        assert disc <= 1e-9

                det = make_slot_encoder(d, k, 7, 6, Rng(7000 + idx), SlotMode.DETERMINISTIC)
                ref = encode_full(x, det, mode, seed=0)
                slots = det.slot_config.deterministic_slots
                from dataclasses import replace

                from slotstream import SlotConfig

                for _ in range(20):
                    perm = rng.permutation(k)
                    cfg = SlotConfig(
                        SlotMode.DETERMINISTIC, k, 7,
                        deterministic_slots=np.ascontiguousarray(slots[perm]),
                    )
                    got = encode_full(x, replace(det, slot_config=cfg), mode, seed=0)
                    assert got.tobytes() == ref[perm].tobytes()
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0
        _passline(
            "criterion 2 (symmetries): input-permutation invariance worst "
            f"{worst:.2e} (<= 1e-9), slot-permutation equivariance bitwise; {elapsed:.1f}s"
        )


class TestCriterion3SoftmaxCounterexample:
    def test_census_and_verify_exit_codes(self, tmp_path):
        started = time.perf_counter()
        rng = Rng(0xC3)
        discrepancies = []
        consistent_worst = 0.0
        for i in range(1000):
            d = 4
            n = 8 + rng.next_below(57)
            x = rng.standard_normal(n, d)
            cut = max(1, n // 3)
            parts = [x[:cut], x[cut:]]

            softmax = make_softmax_pool(d, 2, 8, rng)
            full = softmax_pool_full(x, softmax)
            batched = softmax_pool_minibatch(parts, softmax, AggMode.MEAN)
            discrepancies.append(relative_discrepancy(batched, full))

            sse = make_slot_encoder(d, 3, 4, 5, rng)
            sse_full = encode_full(x, sse, AggMode.SUM, seed=i)
            sample = sample_slots(sse.slot_config, i)
            state = init_state(AggMode.SUM, 3, 5)
            for b in parts:
                state = merge(state, encode_batch(b, sample, sse, AggMode.SUM))
            sse_disc = relative_discrepancy(finalize(state), sse_full)

            deepsets = make_deepsets(d, [6], [4], AggMode.MEAN, rng)
            ds_disc = relative_discrepancy(
                deepsets_encode(parts, deepsets), deepsets_encode(x, deepsets)
            )
            consistent_worst = max(consistent_worst, sse_disc, ds_disc)
            assert sse_disc <= 1e-9 and ds_disc <= 1e-9

        median = statistics.median(discrepancies)
        above = sum(v >= 1e-3 for v in discrepancies) / len(discrepancies)
        assert median >= 1e-3
        assert above >= 0.95

        # the CLI agrees: softmax fails verify-mbc, the consistent encoders pass
        data = Rng(1).standard_normal(24, 4)
        datafile = str(tmp_path / "data.csv")
        with open(datafile, "w") as fh:
            for row in data:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
        sp_model = str(tmp_path / "sp.txt")
        assert cli_main(["new-model", "--kind", "softmax_pool", "--input-dim", "4",
                         "--num-queries", "2", "--attn-dim", "8", "--out", sp_model]) == 0
        assert cli_main(["verify-mbc", "--model", sp_model, "--data", datafile,
                         "--partitions", "30"]) == 1
        sse_model_path = str(tmp_path / "sse.txt")
        assert cli_main(["new-model", "--kind", "sse", "--input-dim", "4",
                         "--layer", "3:4:5:sum", "--out", sse_model_path]) == 0
        assert cli_main(["verify-mbc", "--model", sse_model_path, "--data", datafile,
                         "--partitions", "30"]) == 0
        ds_model_path = str(tmp_path / "ds.txt")
        assert cli_main(["new-model", "--kind", "deepsets", "--input-dim", "4",
                         "--phi", "6", "--rho", "4", "--mode", "mean", "--out", ds_model_path]) == 0
        assert cli_main(["verify-mbc", "--model", ds_model_path, "--data", datafile,
                         "--partitions", "30"]) == 0

        elapsed = time.perf_counter() - started
        assert elapsed < 60.0
        _passline(
            f"criterion 3 (non-MBC counterexample): softmax median discrepancy {median:.2e} "
            f"(>= 1e-3 on {100 * above:.1f}% of 1000), consistent encoders worst "
            f"{consistent_worst:.2e}; verify-mbc exits 1/0/0; {elapsed:.1f}s"
        )


class TestCriterion4SingleSlotDegeneracy:
    def test_sum_mode_equals_value_column_sums_bitwise(self):
        started = time.perf_counter()
        from slotstream.tensor import apply_linear

        for trial in range(100):
            rng = Rng(9000 + trial)
            d = 1 + rng.next_below(6)
            h = 1 + rng.next_below(5)
            a = 1 + rng.next_below(6)
            slot_mode = SlotMode.RANDOM if trial % 2 == 0 else SlotMode.DETERMINISTIC
            params = make_slot_encoder(d, 1, h, a, rng, slot_mode)
            n = 1 + rng.next_below(200)
            x = rng.standard_normal(n, d)
            out = encode_full(x, params, AggMode.SUM, seed=trial)
            expected = column_sums_loop(apply_linear(params.proj_value, x))
            assert out.tobytes() == expected.tobytes()

            # independence from slots and query/key parameters: swap them out
            other = make_slot_encoder(d, 1, h, a, Rng(777 + trial), slot_mode)
            from dataclasses import replace

            hybrid = replace(
                other, proj_value=params.proj_value, input_dim=d, attn_dim=a
            )
            assert encode_full(x, hybrid, AggMode.SUM, seed=trial + 5).tobytes() == out.tobytes()
        elapsed = time.perf_counter() - started
        _passline(
            "criterion 4 (K=1 degeneracy): sum-mode encoding equals value column sums "
            f"bitwise on 100 instances, independent of slot/query/key params; {elapsed:.1f}s"
        )


class TestCriterion5GradientCorrectness:
    def test_finite_differences_across_kinds_and_modes(self):
        started = time.perf_counter()
        worst = 0.0
        excluded_total = 0
        checks = 0
        for seed in range(20):
            rng = Rng(10_000 + seed)
            supports = [rng.standard_normal(5, 3), rng.standard_normal(4, 3)]
            slot_mode = SlotMode.RANDOM if seed % 2 == 0 else SlotMode.DETERMINISTIC
            for mode in MODES:
                stack = make_stack(
                    3,
                    [LayerSpec(2, 3, 4, mode, slot_mode), LayerSpec(1, 3, 3, mode, slot_mode)],
                    Rng(11_000 + seed),
                )
                targets = [rng.standard_normal(2, 3) for _ in range(2)]
                report = tr.grad_check(stack, supports, targets, slot_seed=seed)
                assert report.passed, (seed, "sse", mode, report.worst(3))
                worst = max(worst, report.max_rel_err)
                excluded_total += report.excluded_count
                checks += 1

                deepsets = make_deepsets(3, [4], [3], mode, Rng(12_000 + seed))
                targets = [rng.standard_normal(2, 3) for _ in range(2)]
                report = tr.grad_check(deepsets, supports, targets, slot_seed=seed)
                assert report.passed, (seed, "deepsets", mode, report.worst(3))
                worst = max(worst, report.max_rel_err)
                excluded_total += report.excluded_count
                checks += 1

            softmax = make_softmax_pool(3, 2, 4, Rng(13_000 + seed))
            targets = [rng.standard_normal(2, 8) for _ in range(2)]
            report = tr.grad_check(softmax, supports, targets, slot_seed=seed)
            assert report.passed, (seed, "softmax", report.worst(3))
            worst = max(worst, report.max_rel_err)
            excluded_total += report.excluded_count
            checks += 1
        elapsed = time.perf_counter() - started
        assert elapsed < 180.0
        _passline(
            f"criterion 5 (gradients): {checks} checks, max relative error {worst:.2e} "
            f"(<= 1e-6), {excluded_total} tie coordinates excluded; {elapsed:.1f}s"
        )


TASK = tr.CentroidTask(
    way=2, shot=256, dim=8, spread=0.25, query_spread=0.5, separation=2.0, queries=4
)
EVAL_SIZES = (16, 32, 64, 128, 256)
SEEDS = 10


def _sse_model(seed):
    return make_stack(
        8,
        [LayerSpec(8, 16, 16, AggMode.MEAN), LayerSpec(1, 16, 8, AggMode.MEAN)],
        Rng(seed),
    )


def _deepsets_model(seed):
    return make_deepsets(8, [24, 24], [8], AggMode.MEAN, Rng(seed))


@pytest.fixture(scope="module")
def centroid_runs():
    """Train SSE and DeepSets on the same subset regime, 10 seeds each."""
    eval_rng = Rng(0xE7A1)
    instances = tuple(tr.sample_task(TASK, eval_rng) for _ in range(256))
    sse_started = time.perf_counter()
    sse_curves = []
    for seed in range(SEEDS):
        config = tr.TrainConfig(steps=2000, tasks_per_step=4, subset_size=16, seed=seed)
        result = tr.train_minibatch(_sse_model(100 + seed), TASK, config)
        losses = {
            size: tr.evaluate_on_instances(result.encoder, instances, slot_seed=0, set_size=size)
            for size in EVAL_SIZES
        }
        sse_curves.append(losses)
    sse_elapsed = time.perf_counter() - sse_started
    ds_losses = []
    for seed in range(SEEDS):
        config = tr.TrainConfig(steps=2000, tasks_per_step=4, subset_size=16, seed=seed)
        result = tr.train_minibatch(_deepsets_model(200 + seed), TASK, config)
        ds_losses.append(
            tr.evaluate_on_instances(result.encoder, instances, slot_seed=0, set_size=256)
        )
    return sse_curves, ds_losses, sse_elapsed


class TestCriterion6TrainingGeneralization:
    def test_subset_trained_model_generalizes_to_full_sets(self, centroid_runs):
        sse_curves, _, sse_elapsed = centroid_runs
        for losses in sse_curves:
            subset_loss = losses[16]
            full_loss = losses[256]
            assert abs(full_loss - subset_loss) <= 0.05 * subset_loss
        medians = [statistics.median(c[size] for c in sse_curves) for size in EVAL_SIZES]
        for smaller, larger in zip(medians, medians[1:]):
            assert larger <= smaller, medians
        gap = max(
            abs(c[256] - c[16]) / c[16] for c in sse_curves
        )
        assert sse_elapsed < 600.0
        _passline(
            "criterion 6 (mini-batch training): full-set vs 16-subset loss gap "
            f"max {100 * gap:.2f}% (<= 5%), median loss monotone over sizes "
            f"{list(EVAL_SIZES)} = {[f'{m:.4f}' for m in medians]}; {sse_elapsed:.0f}s"
        )


class TestCriterion7EncoderOrdering:
    def test_sse_median_not_worse_than_deepsets(self, centroid_runs):
        sse_curves, ds_losses, _ = centroid_runs
        sse_params = tr.flatten_params(_sse_model(0)).size
        ds_params = tr.flatten_params(_deepsets_model(0)).size
        assert abs(sse_params - ds_params) / sse_params < 0.02  # matched budgets
        sse_median = statistics.median(c[256] for c in sse_curves)
        ds_median = statistics.median(ds_losses)
        assert sse_median <= ds_median
        _passline(
            f"criterion 7 (ordering): held-out median loss sse {sse_median:.4f} <= "
            f"deepsets {ds_median:.4f} at matched sizes ({sse_params} vs {ds_params} params)"
        )


class TestCriterion8StreamingPersistence:
    def test_split_process_ingest_and_crash_safety(self, tmp_path):
        started = time.perf_counter()
        model = str(tmp_path / "model.txt")
        assert cli_main(["new-model", "--kind", "sse", "--input-dim", "3",
                         "--layer", "4:6:5:mean", "--seed", "3", "--out", model]) == 0
        data = Rng(21).standard_normal(30, 3)
        files = []
        for i, chunk in enumerate([data[:11], data[11:17], data[17:]]):
            f = str(tmp_path / f"batch{i}.csv")
            with open(f, "w") as fh:
                for row in chunk:
                    fh.write(",".join(format(v, ".17g") for v in row) + "\n")
            files.append(f)
        session = str(tmp_path / "session.txt")
        out = str(tmp_path / "enc.csv")

        # every step in its own process
        steps = [["init", "--model", model, "--session", session, "--seed", "5"]]
        steps += [["ingest", f, "--model", model, "--session", session] for f in files]
        steps += [["finalize", "--model", model, "--session", session, "--out", out]]
        for argv in steps:
            proc = subprocess.run(
                [sys.executable, "-m", "slotstream.cli", *argv], capture_output=True
            )
            assert proc.returncode == 0, proc.stderr.decode()

        from slotstream.hierarchy import encode_stream

        bundle = modelio.load_model(model)
        expected = encode_stream(bundle.encoder, [data], 5).ravel()
        got = np.array([float(v) for v in open(out).read().strip().split(",")])
        disc = relative_discrepancy(got, expected)
        assert disc <= 1e-12

        # kill an ingest between temp-write and rename: session must survive
        before = open(session, "rb").read()
        script = (
            "import os\n"
            "import slotstream.modelio as mio\n"
            "os.replace = lambda a, b: os._exit(137)\n"
            "from slotstream.cli import main\n"
            f"main(['ingest', {files[0]!r}, '--model', {model!r}, '--session', {session!r}])\n"
        )
        proc = subprocess.run([sys.executable, "-c", script], capture_output=True)
        assert proc.returncode == 137
        assert open(session, "rb").read() == before
        loaded = modelio.load_session(session)
        assert loaded.count == 30
        # and the session keeps working afterwards
        assert cli_main(["ingest", files[0], "--model", model, "--session", session]) == 0
        assert modelio.load_session(session).count == 41
        elapsed = time.perf_counter() - started
        _passline(
            f"criterion 8 (persistence): split-process vs single-process discrepancy "
            f"{disc:.2e} (<= 1e-12), kill-during-ingest left the session intact; {elapsed:.1f}s"
        )
