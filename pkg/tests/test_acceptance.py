"""Acceptance suite.

One test per shipped guarantee; the terminal summary prints a PASS/FAIL
line for each. Everything here runs offline with the scripted gateway and
the scripted executor only.
"""

import math
import random
import sys
import time
from pathlib import Path

from conftest import cartpole_config, fenced, make_trainer, sudoku_config

from golden_cases import GOLDEN_DIR, golden_cases

from evoscript.checkpoint import load_checkpoint, save_checkpoint
from evoscript.execution import ExecutionRequest, ScriptedExecutor
from evoscript.objectives import DrivingAction, ObjectiveSpec, score_mixed_il_rl
from evoscript.policies import PolicyRecord, best_policy, rerank, update_priority
from evoscript.replay import ReplayBuffer, Sample
from evoscript.tasks import get_task, reference_policy
from evoscript.tasks.cartpole import CartPoleEnv
from evoscript.templates import read_template
from evoscript.training import TrainerConfig, evaluate_model

TEMPLATES = Path(__file__).parent / "data" / "templates"


# -- priority arithmetic -------------------------------------------------------

def unrolled_oracle(batches, gamma):
    """Brute-force recomputation over the whole history of batches."""
    k = len(batches)
    num = math.fsum(gamma ** (k - t) * math.fsum(s) for t, s in enumerate(batches, 1))
    den = math.fsum(gamma ** (k - t) * len(s) for t, s in enumerate(batches, 1))
    return num / den


def iterate(batches, gamma):
    record = PolicyRecord(id="p", script="")
    for scores in batches:
        record = update_priority(record, scores, gamma)
    return record


def random_batches(rng):
    return [
        [rng.uniform(-10, 1) for _ in range(rng.randint(1, 8))]
        for _ in range(rng.randint(1, 10))
    ]


def test_priority_update_matches_unrolled_oracle_on_1000_cases():
    rng = random.Random(20240)
    started = time.monotonic()
    for case in range(1000):
        gamma = rng.choice([0.0, 1.0, rng.random(), rng.random()])
        batches = random_batches(rng)
        record = iterate(batches, gamma)
        assert abs(record.priority - unrolled_oracle(batches, gamma)) <= 1e-12
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"oracle sweep took {elapsed:.2f}s"


def test_gamma_one_and_gamma_zero_closures_on_200_sequences():
    rng = random.Random(7)
    for case in range(200):
        batches = random_batches(rng)
        # gamma=1: cumulative mean of every score ever observed
        cumulative = iterate(batches, 1.0)
        flat = [s for batch in batches for s in batch]
        assert abs(cumulative.priority - math.fsum(flat) / len(flat)) <= 1e-12
        assert cumulative.weight == float(len(flat))
        # gamma=0: exactly the latest batch mean, weight pinned at zero
        latest = iterate(batches, 0.0)
        assert latest.priority == math.fsum(batches[-1]) / len(batches[-1])
        assert latest.weight == 0.0


# -- template goldens ----------------------------------------------------------

def test_template_example_renders_the_two_name_golden():
    text = read_template(TEMPLATES, "example", people=["Tom", "Jerry"])
    assert text == (
        "Tom and Jerry work here.\nTom is employee No. 1.\nJerry is employee No. 2.\n"
    )


def test_ten_golden_renders_of_shipped_prompts_are_byte_exact():
    cases = golden_cases()
    assert len(cases) == 10
    for name, text in cases:
        expected = (GOLDEN_DIR / f"{name}.txt").read_text(encoding="utf-8")
        assert text == expected, f"golden mismatch for {name}"


# -- population bound ----------------------------------------------------------

def test_population_bound_holds_over_random_update_steps():
    for seed in range(8):
        rng = random.Random(seed)
        n_update = rng.randint(1, 3)
        n_responses = rng.randint(1, 3)
        n_keep = rng.randint(max(2, n_update), 6)
        n_initial = rng.randint(1, 4)
        max_batches = 3
        pool = []
        for i in range(n_initial + max_batches * n_update * n_responses):
            kind = rng.random()
            if kind < 0.5:
                pool.append(fenced(f"# behavior: identity\n# variant {rng.randint(0, 6)}"))
            elif kind < 0.7:
                pool.append(fenced("# behavior: raise"))
            else:
                pool.append("just words, no code fence, not even a marker")
        config = sudoku_config(
            n_update=n_update, n_responses=n_responses, n_keep=n_keep,
            n_initial=n_initial, max_batches=max_batches, batch_size=5,
            task_params={"count": 10, "width": 2, "height": 2, "mask_fraction": 0.4},
        )
        trainer = make_trainer(config, pool)
        outcome = trainer.train()
        bound = n_keep + n_update * n_responses
        for line in outcome["metrics"]:
            assert line["n_policies"] <= bound, (seed, line)
        assert len(outcome["model"].alive()) <= bound


# -- sudoku end to end -----------------------------------------------------------

def test_sudoku_end_to_end_recovers_from_wrong_zero_shot(tmp_path):
    wrong = reference_policy("sudoku_fixed_3x3.py")
    correct = reference_policy("sudoku_general.py")
    responses = [
        fenced(wrong, chatter="Here is a standard Sudoku solver."),
        fenced(correct, chatter="The subblock geometry must follow width/height."),
        fenced(correct, chatter="Nothing further to fix."),
    ]
    started = time.monotonic()
    trainer = make_trainer(sudoku_config(), responses, out_dir=tmp_path / "run")
    outcome = trainer.train()
    elapsed = time.monotonic() - started
    model = outcome["model"]
    ranked = rerank(model.alive())
    assert ranked[0].script == correct, "correct revision must rank first"
    assert outcome["metrics"][-1]["best_P"] == 1.0
    assert len(outcome["metrics"]) == 2, "must converge within 2 batch updates"
    assert elapsed < 60.0, f"run took {elapsed:.1f}s"


# -- cartpole ---------------------------------------------------------------------

def _rollout_return(script, seed):
    executor = ScriptedExecutor(table=get_task("cartpole").behaviors())
    env = CartPoleEnv()
    obs = env.reset(seed)
    total = 0.0
    for step in range(500):
        result = executor.run(
            ExecutionRequest(f"s{seed}-{step}", script, "choose_action", obs, 2000)
        )
        assert result.ok, result
        obs, reward, done = env.step(result.output)
        total += reward
        if done:
            break
    return total


def test_cartpole_reference_policy_scores_500_on_seeds_0_to_9():
    script = reference_policy("cartpole_pid.py")
    returns = [_rollout_return(script, seed) for seed in range(10)]
    assert returns == [500.0] * 10


def test_cartpole_simplistic_policy_scores_under_30():
    script = reference_policy("cartpole_naive.py")
    returns = [_rollout_return(script, seed) for seed in range(10)]
    mean = sum(returns) / len(returns)
    assert mean < 30.0
    pid_mean = 500.0
    assert mean < pid_mean, "ordering: trained policy must beat the zero-shot one"


def test_cartpole_scripted_gateway_reaches_500_by_update_three(tmp_path):
    responses = [
        fenced(reference_policy("cartpole_naive.py")),
        fenced(reference_policy("cartpole_theta.py")),
        fenced(reference_policy("cartpole_theta.py"), chatter="Still chasing theta."),
        fenced(reference_policy("cartpole_pid.py")),
    ]
    trainer = make_trainer(cartpole_config(), responses, out_dir=tmp_path / "run")
    metrics = trainer.train()["metrics"]
    assert [m["k"] for m in metrics] == [1, 2, 3]
    assert metrics[0]["best_P"] < 500.0
    assert metrics[2]["best_P"] == 500.0


# -- mixed objective -------------------------------------------------------------

def test_mixed_objective_branch_completeness():
    spec = ObjectiveSpec(kind="mixed_il_rl")
    act = DrivingAction
    # hand-derived values for the eight (match, infraction, agreement) combos
    table = [
        (act("MOVE"), act("MOVE"), act("MOVE"), False, 1.0),
        (act("MOVE"), act("MOVE"), act("STOP"), False, 1.0),
        (act("MOVE"), act("MOVE"), act("STOP"), True, 1.0),
        (act("MOVE"), act("MOVE"), act("MOVE"), True, 0.0),
        (act("SLOW"), act("MOVE"), act("STOP"), False, 0.0),
        (act("SLOW"), act("MOVE"), act("SLOW"), False, 0.0),
        (act("SLOW"), act("MOVE"), act("STOP"), True, 0.0),
        (act("STOP"), act("MOVE"), act("STOP"), True, -10.0),
    ]
    for policy, expert, behavior, infraction, expected in table:
        value = score_mixed_il_rl(spec, policy, expert, behavior, infraction, False)
        assert value == expected, (policy, expert, behavior, infraction)
    # angle branch: a lone angle violation costs the angle penalty
    assert score_mixed_il_rl(spec, act("MOVE", 11.0), act("MOVE", 0.0), None, False, False) == -9.0
    # exception branch: the clamp floor regardless of everything else
    assert score_mixed_il_rl(spec, None, act("MOVE"), None, False, True) == -10.0
    assert score_mixed_il_rl(spec, act("STOP", 90.0), act("MOVE"), act("STOP"), True, True) == -10.0
    # exhaustive range check over every stored score the objective can emit
    levels = ("MOVE", "SLOW", "STOP")
    for p in levels:
        for e in levels:
            for b in levels:
                for infraction in (False, True):
                    for exc in (False, True):
                        for angle in (0.0, 30.0):
                            value = score_mixed_il_rl(
                                spec, act(p, angle), act(e), act(b), infraction, exc
                            )
                            assert -10.0 <= value <= 1.0


# -- infraction oversampling ------------------------------------------------------

def test_infraction_oversampling_matches_weighted_oracle():
    buffer = ReplayBuffer(infraction_weight=100.0)
    for i in range(99):
        buffer.add(Sample(input={"i": i}, origin="offline"))
    buffer.add(Sample(input={"i": 99}, origin="offline", infraction=True,
                      behavior_action=DrivingAction("MOVE"),
                      expert_action=DrivingAction("STOP")))
    rng = random.Random(123)
    draws = 10_000
    hits = 0
    for _ in range(draws):
        picked = buffer.sample_split(1, 0, rng)
        assert len(picked) == 1
        hits += picked[0].infraction
    p = 100.0 / 199.0  # exact single-slot inclusion probability for weight 100
    sigma = math.sqrt(draws * p * (1 - p))
    assert abs(hits - draws * p) <= 3 * sigma, f"hits={hits}, expected={draws * p:.0f}"


# -- checkpoints -------------------------------------------------------------------

def test_checkpoint_round_trip_and_llm_free_inference(tmp_path):
    wrong = reference_policy("sudoku_fixed_3x3.py")
    correct = reference_policy("sudoku_general.py")
    responses = [fenced(wrong), fenced(correct), fenced(correct)]
    config = sudoku_config()
    trainer = make_trainer(config, responses, out_dir=tmp_path / "run")
    trainer.train()
    checkpoint_dir = tmp_path / "run" / "checkpoint"

    # save -> load -> save produces byte-identical tracker.json
    model, snapshot = load_checkpoint(checkpoint_dir)
    save_checkpoint(model, snapshot, tmp_path / "resaved")
    assert (checkpoint_dir / "tracker.json").read_bytes() == (
        tmp_path / "resaved" / "tracker.json"
    ).read_bytes()

    # identical rerank order after reload
    reloaded, _ = load_checkpoint(tmp_path / "resaved")
    assert [p.id for p in rerank(reloaded.alive())] == [p.id for p in rerank(model.alive())]

    # inference requires no gateway
    task = get_task("sudoku")
    executor = ScriptedExecutor(table=task.behaviors())
    summary = evaluate_model(task, TrainerConfig.from_dict(snapshot), reloaded, executor)
    assert summary["mean_score"] == 1.0

    # the whole checkpoint stays far under a megabyte
    total = sum(p.stat().st_size for p in checkpoint_dir.rglob("*") if p.is_file())
    assert total < 1_000_000, f"checkpoint is {total} bytes"


# -- crash containment --------------------------------------------------------------

def _random_blob_scripts(count, rng):
    scripts = {}
    while len(scripts) < count:
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 400)))
        script = blob.decode("utf-8", errors="replace")
        scripts[script] = None
    return list(scripts)


def test_crash_containment_on_500_fuzzed_scripts():
    rng = random.Random(99)
    blobs = _random_blob_scripts(500, rng)
    config = sudoku_config(batch_size=2, task_params={
        "count": 2, "width": 2, "height": 2, "mask_fraction": 0.4})
    trainer = make_trainer(config, [])
    data = trainer.task.dataset(config)
    policies = [
        PolicyRecord(id=f"0000-{i:010d}", script=script)
        for i, script in enumerate(blobs)
    ]
    scores, results = trainer.forward_batch(policies, data, 1)
    for record in policies:
        assert scores.scores[record.id] == [-10.0, -10.0]
        assert all(r.status == "protocol_error" for r in results[record.id])


def test_trainer_survives_a_gateway_spewing_garbage(tmp_path):
    rng = random.Random(5)
    correct = reference_policy("sudoku_general.py")
    responses = [fenced(correct)] + _random_blob_scripts(8, rng)
    config = sudoku_config(
        max_batches=3, batch_size=10,
        n_update=1, n_responses=2, n_initial=1,
        task_params={"count": 10, "width": 2, "height": 3, "mask_fraction": 0.4},
    )
    trainer = make_trainer(config, responses, out_dir=tmp_path / "run")
    outcome = trainer.train()
    best = best_policy(outcome["model"].policies)
    assert best.script == correct, "pre-existing best must survive a broken gateway"
    assert outcome["metrics"][-1]["best_P"] == 1.0


# -- no secondary component ----------------------------------------------------------

def test_primary_suite_runs_without_the_secondary_component():
    # The worker shim is a separate package; nothing in this suite (or in
    # the primary package) may import it.
    assert "policy_runner" not in sys.modules
    import evoscript

    package_root = Path(evoscript.__file__).parent
    for source in package_root.rglob("*.py"):
        assert "policy_runner" not in source.read_text(encoding="utf-8"), source
