"""Checkpoint round-trips, error taxonomy, and LLM-free reloading."""

import json

import pytest

from evoscript.checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    PolicyModel,
    load_checkpoint,
    save_checkpoint,
)
from evoscript.policies import PolicyRecord, rerank


def model_fixture(n_policies=23):
    policies = []
    for i in range(n_policies):
        policies.append(
            PolicyRecord(
                id=f"{i % 5:04d}-{i:010d}",
                script=f"# behavior: identity\n# variant {i}\n",
                priority=(i * 0.37) % 1.0,
                weight=float(i % 7),
                created_at_batch=i % 5,
                parent_id=None if i < 3 else f"{(i - 3) % 5:04d}-{i - 3:010d}",
                alive=(i % 6 != 5),
            )
        )
    return PolicyModel(
        setup_template="setup {{ x }}\n",
        update_template="update {{ y }}\n",
        policies=policies,
        batch_index=4,
    )


class TestRoundTrip:
    def test_tracker_bytes_are_a_fixpoint(self, tmp_path):
        model = model_fixture()
        first_dir = tmp_path / "ck1"
        save_checkpoint(model, {"seed": 1}, first_dir)
        loaded, config = load_checkpoint(first_dir)
        second_dir = tmp_path / "ck2"
        save_checkpoint(loaded, config, second_dir)
        assert (first_dir / "tracker.json").read_bytes() == (
            second_dir / "tracker.json"
        ).read_bytes()
        assert (first_dir / "manifest.json").read_bytes() == (
            second_dir / "manifest.json"
        ).read_bytes()

    def test_priorities_weights_and_rank_order_survive_bit_exact(self, tmp_path):
        model = model_fixture()
        save_checkpoint(model, {}, tmp_path / "ck")
        loaded, _ = load_checkpoint(tmp_path / "ck")
        stats = {p.id: (p.priority, p.weight, p.created_at_batch, p.alive, p.parent_id)
                 for p in model.policies}
        for record in loaded.policies:
            assert stats[record.id] == (
                record.priority, record.weight, record.created_at_batch,
                record.alive, record.parent_id,
            )
        assert [p.id for p in rerank(loaded.alive())] == [
            p.id for p in rerank(model.alive())
        ]
        assert loaded.batch_index == model.batch_index

    def test_scripts_split_between_live_and_retired(self, tmp_path):
        model = model_fixture()
        save_checkpoint(model, {}, tmp_path / "ck")
        live = {p.id for p in model.policies if p.alive}
        dead = {p.id for p in model.policies if not p.alive}
        on_disk_live = {p.stem for p in (tmp_path / "ck" / "policies").glob("*.txt")}
        on_disk_dead = {p.stem for p in (tmp_path / "ck" / "retired").glob("*.txt")}
        assert on_disk_live == live
        assert on_disk_dead == dead

    def test_overwrite_keeps_directory_consistent(self, tmp_path):
        model = model_fixture(5)
        save_checkpoint(model, {}, tmp_path / "ck")
        model.batch_index = 9
        save_checkpoint(model, {}, tmp_path / "ck")
        loaded, _ = load_checkpoint(tmp_path / "ck")
        assert loaded.batch_index == 9
        assert not (tmp_path / "ck.tmp").exists()
        assert not (tmp_path / "ck.old").exists()


class TestErrors:
    def test_version_mismatch(self, tmp_path):
        save_checkpoint(model_fixture(3), {}, tmp_path / "ck")
        manifest = tmp_path / "ck" / "manifest.json"
        manifest.write_text(json.dumps({"format_version": 99, "batch_index": 0}))
        with pytest.raises(CheckpointVersionError, match="99"):
            load_checkpoint(tmp_path / "ck")

    def test_missing_script_file(self, tmp_path):
        save_checkpoint(model_fixture(3), {}, tmp_path / "ck")
        victim = next((tmp_path / "ck" / "policies").glob("*.txt"))
        victim.unlink()
        with pytest.raises(CheckpointError, match="does not exist"):
            load_checkpoint(tmp_path / "ck")

    def test_malformed_tracker_json(self, tmp_path):
        save_checkpoint(model_fixture(3), {}, tmp_path / "ck")
        (tmp_path / "ck" / "tracker.json").write_text("{nope")
        with pytest.raises(CheckpointError, match="malformed JSON"):
            load_checkpoint(tmp_path / "ck")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "missing")

    def test_duplicate_policy_ids_rejected_on_save(self, tmp_path):
        model = model_fixture(3)
        model.policies.append(model.policies[0])
        with pytest.raises(CheckpointError, match="duplicate"):
            save_checkpoint(model, {}, tmp_path / "ck")
