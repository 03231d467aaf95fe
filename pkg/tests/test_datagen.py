import dataclasses
import json

import numpy as np
import pytest

from moticomp.datagen import (ActionSpec, CHECKPOINT_VERSION, build_dataset, compose_oracle, default_manifest,
                              default_skeleton, generate_atomic, load_checkpoint,
                              load_motion, load_split, manifest_from_json,
                              manifest_to_json, rest_pose, save_checkpoint,
                              save_motion, save_split)
from moticomp.dct import dct_encode
from moticomp.errors import (CheckpointError, ConfigError, ManifestError,
                             ParseError)
from moticomp.motion import LOWER, UPPER, MotionSequence, PartLayout
from moticomp.vae import BodyMask, CagTrainConfig, masked_fuse, train_cag, \
    synthesize_composite


class TestGenerateAtomic:
    def test_still_spec_is_constant(self):
        man = default_manifest()
        still = next(a for a in man.actions if a.part == "still")
        seq = generate_atomic(still, man.skeleton, 12, 10.0, seed=5)
        assert np.all(seq.data == seq.data[0])
        assert np.array_equal(seq.data[0], rest_pose(man.skeleton))

    def test_same_seed_bit_identical(self):
        man = default_manifest()
        spec = man.actions[0]
        a = generate_atomic(spec, man.skeleton, 30, 10.0, seed=42)
        b = generate_atomic(spec, man.skeleton, 30, 10.0, seed=42)
        assert np.array_equal(a.data, b.data)
        c = generate_atomic(spec, man.skeleton, 30, 10.0, seed=43)
        assert not np.array_equal(a.data, c.data)

    def test_matches_closed_form_sinusoid(self):
        sk = default_skeleton()
        j = sk.joint_count
        amplitude = [0.0] * j
        frequency = [0.0] * j
        phase = [0.0] * j
        drift = [0.0] * j
        joint = 5  # an upper joint
        amplitude[joint], frequency[joint], phase[joint], drift[joint] = 10.0, 0.5, 0.3, 0.25
        spec = ActionSpec(name="osc", part=UPPER, amplitude=tuple(amplitude),
                          frequency=tuple(frequency), phase=tuple(phase),
                          drift=tuple(drift), noise_std=0.0)
        fps, length = 10.0, 20
        seq = generate_atomic(spec, sk, length, fps, seed=0)
        rest = rest_pose(sk)
        frames = np.arange(length)
        expected = (rest[3 * joint]
                    + 10.0 * np.sin(2 * np.pi * 0.5 * frames / fps + 0.3)
                    + 0.25 * frames)
        assert np.abs(seq.data[:, 3 * joint] - expected).max() < 1e-12
        # joints outside the moving part hold their rest position exactly
        assert np.all(seq.data[:, 0:3] == 0.0)
        for other in sk.joints_of(LOWER):
            cols = slice(3 * other, 3 * other + 3)
            assert np.all(seq.data[:, cols] == rest[cols])

    def test_root_is_centered_even_for_lower_actions(self):
        man = default_manifest()
        lower = next(a for a in man.actions if a.part == LOWER)
        seq = generate_atomic(lower, man.skeleton, 15, 10.0, seed=9)
        assert np.all(seq.data[:, 0:3] == 0.0)

    def test_joint_count_mismatch(self):
        man = default_manifest()
        short = ActionSpec(name="x", part=UPPER, amplitude=(0.0,), frequency=(0.0,),
                           phase=(0.0,), drift=(0.0,))
        with pytest.raises(ConfigError):
            generate_atomic(short, man.skeleton, 10, 10.0, 0)


class TestComposeOracle:
    def setup_method(self):
        self.man = default_manifest()
        self.layout = PartLayout.from_skeleton(self.man.skeleton)
        self.mask = BodyMask.from_layout(self.layout)
        upper = next(a for a in self.man.actions if a.part == UPPER)
        lower = next(a for a in self.man.actions if a.part == LOWER)
        self.seq_u = generate_atomic(upper, self.man.skeleton, 30, 10.0, 1)
        self.seq_l = generate_atomic(lower, self.man.skeleton, 30, 10.0, 2)

    def test_equal_inputs_identity(self):
        out = compose_oracle(self.seq_u, self.seq_u, self.mask)
        assert np.array_equal(out.data, self.seq_u.data)

    def test_all_ones_mask_returns_first(self):
        ones = BodyMask(m=np.ones(self.layout.size))
        out = compose_oracle(self.seq_u, self.seq_l, ones)
        assert np.array_equal(out.data, self.seq_u.data)

    def test_commutes_with_masked_fuse(self):
        composed = compose_oracle(self.seq_u, self.seq_l, self.mask)
        lhs = dct_encode(composed.data, 30).coeffs
        rhs = masked_fuse(self.seq_u, self.seq_l, self.mask, 30).coeffs
        assert np.array_equal(lhs, rhs)  # binary mask makes this exact

    def test_label_join(self):
        out = compose_oracle(self.seq_u, self.seq_l, self.mask)
        assert out.label == f"{self.seq_u.label}+{self.seq_l.label}"


class TestMotionFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        seq = MotionSequence(data=rng.normal(scale=123.456, size=(7, 6)),
                             fps=12.5, label="wave+squat")
        path = tmp_path / "m.txt"
        save_motion(path, seq)
        back = load_motion(path)
        assert np.array_equal(back.data, seq.data)
        assert back.fps == seq.fps
        assert back.label == seq.label

    def test_wrong_column_count_cites_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        lines = ["champlite v1 J=2 fps=10.0 frames=4 label=x"]
        lines += ["0 0 0 0 0 0"] * 4
        lines[4] = "0 0 0 0 0"  # line 5 of the file
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match="line 5"):
            load_motion(path)

    def test_hand_written_fixture(self, tmp_path):
        path = tmp_path / "hand.txt"
        path.write_text(
            "champlite v1 J=1 fps=10.0 frames=2 label=tiny\n"
            "1 2 3\n"
            "4.5 -6 7e2\n"
        )
        seq = load_motion(path)
        assert np.array_equal(seq.data, [[1.0, 2.0, 3.0], [4.5, -6.0, 700.0]])
        assert seq.label == "tiny"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("champlite v2 J=1 fps=10 frames=2 label=x\n1 2 3\n1 2 3\n")
        with pytest.raises(ParseError, match="line 1"):
            load_motion(path)

    def test_split_round_trip(self, tmp_path):
        man = default_manifest()
        seqs = [generate_atomic(man.actions[0], man.skeleton, 30, 10.0, s)
                for s in range(3)]
        save_split(tmp_path / "train", seqs)
        back = load_split(tmp_path / "train")
        assert len(back) == 3
        for a, b in zip(seqs, back):
            assert np.array_equal(a.data, b.data)
            assert a.label == b.label


class TestCheckpoints:
    def trained_vae(self):
        man = default_manifest()
        seqs = [generate_atomic(man.actions[i % len(man.actions)], man.skeleton,
                                30, 10.0, 50 + i) for i in range(8)]
        config = CagTrainConfig(epochs=2, latent_dim=4, hidden_dims=(16,), seed=0)
        return train_cag(seqs, config).params, man

    def test_vae_round_trip_preserves_synthesis(self, tmp_path):
        params, man = self.trained_vae()
        path = tmp_path / "cag.json"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        layout = PartLayout.from_skeleton(man.skeleton)
        mask = BodyMask.from_layout(layout)
        upper = next(a for a in man.actions if a.part == UPPER)
        lower = next(a for a in man.actions if a.part == LOWER)
        seq_u = generate_atomic(upper, man.skeleton, 30, 10.0, 7)
        seq_l = generate_atomic(lower, man.skeleton, 30, 10.0, 8)
        a = synthesize_composite(params, seq_u, seq_l, mask, 30, noise=None)
        b = synthesize_composite(loaded, seq_u, seq_l, mask, 30, noise=None)
        assert np.array_equal(a.data, b.data)

    def test_truncated_file_is_integrity_error(self, tmp_path):
        params, _ = self.trained_vae()
        path = tmp_path / "cag.json"
        save_checkpoint(path, params)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        params, _ = self.trained_vae()
        path = tmp_path / "cag.json"
        save_checkpoint(path, params)
        doc = json.loads(path.read_text())
        doc["version"] = CHECKPOINT_VERSION + 1
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_not_a_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestBuildDataset:
    def test_default_split_composition(self):
        man = default_manifest()
        splits = build_dataset(man)
        # 10 atomic classes x 20
        assert len(splits.train) == 200
        assert all("+" not in s.label for s in splits.train)
        test_composites = {s.label for s in splits.test if "+" in s.label}
        assert len(test_composites) == 18  # 6 upper x 3 lower
        assert len(splits.test) == 10 * 2 + 18 * 2

    def test_regeneration_bit_identical(self):
        man = default_manifest()
        a = build_dataset(man)
        b = build_dataset(man)
        for seq_a, seq_b in zip(a.train + a.val + a.test, b.train + b.val + b.test):
            assert np.array_equal(seq_a.data, seq_b.data)
            assert seq_a.label == seq_b.label

    def test_manifest_json_round_trip(self):
        man = default_manifest()
        back = manifest_from_json(manifest_to_json(man))
        assert back == man

    def test_unknown_keys_rejected(self):
        doc = json.loads(manifest_to_json(default_manifest()))
        doc["surprise"] = 1
        with pytest.raises(ManifestError, match="unknown"):
            manifest_from_json(json.dumps(doc))

    def test_missing_keys_rejected(self):
        doc = json.loads(manifest_to_json(default_manifest()))
        del doc["fps"]
        with pytest.raises(ManifestError, match="missing"):
            manifest_from_json(json.dumps(doc))

    def test_overlapping_seed_ranges_rejected(self):
        man = default_manifest()
        with pytest.raises(ManifestError, match="overlap"):
            dataclasses.replace(man, val_seed=man.train_seed + 1)

    def test_still_class_present_in_test(self):
        splits = build_dataset(default_manifest())
        assert any(s.label == "still" for s in splits.test)


class TestActionSpecValidation:
    def test_still_with_amplitude_rejected(self):
        with pytest.raises(ConfigError):
            ActionSpec(name="s", part="still", amplitude=(1.0,), frequency=(0.0,),
                       phase=(0.0,), drift=(0.0,))

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ConfigError):
            ActionSpec(name="a", part=UPPER, amplitude=(-1.0,), frequency=(0.0,),
                       phase=(0.0,), drift=(0.0,))

    def test_unknown_part_rejected(self):
        with pytest.raises(ConfigError):
            ActionSpec(name="a", part="head", amplitude=(0.0,), frequency=(0.0,),
                       phase=(0.0,), drift=(0.0,))
