"""Smoke test for the spolab Python extension.

Build and install the module first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o target/wheels
    pip install target/wheels/spolab-*.whl

Then run `python python/smoke_test.py` from the repository root.
"""

import json
import math
import pathlib

import spolab

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def check_tracker():
    assert spolab.init_from_samples(6, 8) == (6.0, 2.0)
    assert spolab.forgetting_factor(0.0) == 0.96
    assert spolab.forgetting_factor(10.0) == 0.875
    assert close(spolab.forgetting_factor(0.1, rho_min=0.1, rho_max=0.9), 0.5)

    alpha, beta = spolab.update_binary(6.0, 2.0, 1.0, 0.9)
    v, n = spolab.update_general(0.75, 8.0, 1.0, 0.9)
    assert close(alpha / (alpha + beta), v) and close(alpha + beta, n)

    t = spolab.Tracker(3)
    assert len(t) == 3 and t.values() == [0.5, 0.5, 0.5]
    before = t.values()[1]
    after = t.observe(1, 1.0, 0.0)
    assert after > before
    restored = spolab.Tracker.restore(t.snapshot(), 3)
    assert restored.values() == t.values()


def check_advantages_and_sampler():
    values, mean, std, degenerate = spolab.normalize_global([1.0, 0.0, 0.5, -0.5])
    assert not degenerate and close(sum(values), 0.0, 1e-12)
    assert spolab.normalize_global([0.3, 0.3])[3]
    assert spolab.grpo_advantages([1.0, 1.0, 1.0]) == [0.0, 0.0, 0.0]
    assert close(sum(spolab.rloo_advantages([1.0, 0.0, 0.0, 1.0])), 0.0)

    probs = spolab.sampling_probabilities([0.0, 0.5, 1.0])
    for p, q in zip(probs, [1 / 13, 11 / 13, 1 / 13]):
        assert close(p, q, 1e-15)
    batch = spolab.sample_batch([0.1, 0.5, 0.9, 0.3], 4, seed=1)
    assert sorted(batch) == [0, 1, 2, 3]


def check_policy():
    assert close(spolab.clip_objective(1.5, 1.0), 1.28, 1e-15)
    a = spolab.Policy(1, 2, [math.log(0.9), math.log(0.1)])
    b = spolab.Policy(1, 2)
    assert close(a.kl(b, 0), 0.9 * math.log(1.8) + 0.1 * math.log(0.2))
    loss, grad = b.surrogate([(0, 0, math.log(0.5), 1.0)])
    assert close(loss, -1.0) and close(grad[0], -0.5) and close(grad[1], 0.5)


def check_analysis():
    assert round(spolab.expected_dynamic_samples(0.1), 2) == 10.11
    assert close(spolab.degeneracy_prob(0.5, 8), 0.0078125)
    assert abs(spolab.information_loss_factor(0.9, 8) - 1.7559) < 1e-3
    r = spolab.variance_ratio(8, 0.5)
    assert abs(r["ratio"] - 1.1339) < 1e-4
    try:
        spolab.expected_dynamic_samples(0.0)
    except ArithmeticError:
        pass
    else:
        raise AssertionError("p = 0 must diverge")


def check_sched():
    g = spolab.group_batch_makespan([[10, 20, 30], [5, 5, 50]], 2)
    f = spolab.groupfree_batch_makespan([10, 20, 30, 5, 5, 50], 4)
    assert g["makespan"] == 50 and f["makespan"] == 20
    cfg = (FIXTURES / "heavy_tail.json").read_text()
    speedups = sorted(spolab.sched_speedups(cfg, 200, threads=2))
    assert all(s >= 1.0 for s in speedups)
    assert 2.0 <= speedups[len(speedups) // 2] <= 6.0


def check_train():
    cfg = json.loads((FIXTURES / "spo_easyhard.json").read_text())
    cfg["iterations"] = 20
    text = json.dumps(cfg)
    rows = spolab.train(text, base_dir=str(FIXTURES))
    assert len(rows) == 20 and rows[-1]["iter"] == 20
    assert rows[-1]["J"] > rows[0]["J"]
    assert all(r["contributing"] <= r["samples"] for r in rows)
    assert spolab.train_csv(text, str(FIXTURES)) == spolab.train_csv(text, str(FIXTURES))


def main():
    for check in (check_tracker, check_advantages_and_sampler, check_policy, check_analysis, check_sched, check_train):
        check()
        print(f"ok  {check.__name__}")
    print(f"spolab {spolab.__version__}: all smoke checks passed")


if __name__ == "__main__":
    main()
