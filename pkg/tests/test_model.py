import numpy as np
import pytest
import torch

from haaqinet.distill import StudentConfig
from haaqinet.features import EncoderConfig, TransformerEncoder, freeze
from haaqinet.model import VARIANTS, build_model, extract_raw, feature_dim, predict
from haaqinet.predictor import Example, PredictorConfig, TrainConfig, collate, train
from haaqinet.serialization import WeightsFormatError, load_weights, save_weights

ENC = EncoderConfig(num_layers=4, model_dim=18, num_heads=2, ff_dim=24, mel_bins=32, patch_frames=4, patch_bins=16)
STUDENT = StudentConfig(kept_layers=2, tapped_layers=(2, 3, 4))
PRED = PredictorConfig(lstm_hidden=4, fc_dim=16, num_heads=4)


@pytest.fixture(scope="module")
def teacher():
    return freeze(TransformerEncoder.from_seed(ENC, 0))


@pytest.fixture(scope="module")
def clip():
    return np.random.default_rng(0).standard_normal(8000) * 0.3


class TestVariants:
    def test_feature_dims(self):
        assert feature_dim("spectrogram", ENC) == 257
        assert feature_dim("ws", ENC) == 18
        assert feature_dim("last-winavg", ENC) == 6
        assert feature_dim("ws-adapter", ENC) == 257
        with pytest.raises(ValueError):
            feature_dim("mfcc", ENC)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_end_to_end_predict(self, variant, teacher, clip):
        model = build_model(variant, ENC, PRED, 0, student_cfg=STUDENT, teacher=teacher)
        raw = extract_raw(clip, variant, teacher)
        p = predict(model, raw, np.full(8, 0.4))
        assert 0 <= p.clip_score <= 1
        assert p.clip_score == pytest.approx(float(p.frame_scores.mean()), abs=1e-6)

    def test_raw_shapes(self, teacher, clip):
        assert extract_raw(clip, "spectrogram").shape == (30, 257)
        assert extract_raw(clip, "student", teacher).shape == (48, 32)
        assert extract_raw(clip, "last", teacher).shape == (24, 18)
        assert extract_raw(clip, "ws", teacher).shape == (4, 24, 18)
        with pytest.raises(ValueError):
            extract_raw(clip, "ws")

    def test_student_batch_lengths(self, teacher, clip):
        model = build_model("student", ENC, PRED, 0, student_cfg=STUDENT, teacher=teacher).double()
        a = extract_raw(clip, "student", teacher)
        b = extract_raw(clip[:4000], "student", teacher)
        batch = collate([Example(a, np.zeros(8), 0.5), Example(b, np.zeros(8), 0.5)], torch.float64)
        clip_scores, _ = model(batch[0], batch[1], batch[3])
        alone, _ = model(torch.tensor(b[None]), torch.zeros(1, 8, dtype=torch.float64))
        assert clip_scores[1].item() == pytest.approx(alone[0].item(), abs=1e-9)

    def test_non_finite_weights(self, teacher, clip):
        model = build_model("spectrogram", ENC, PRED, 0)
        with torch.no_grad():
            model.predictor.out.bias.fill_(float("nan"))
        with pytest.raises(FloatingPointError):
            predict(model, extract_raw(clip, "spectrogram"), np.zeros(8))

    def test_fusion_trains_teacher_stays(self, teacher, clip):
        raw = extract_raw(clip, "ws-adapter", teacher)
        data = [Example(raw, np.full(8, 0.1 * i), 0.1 * i) for i in range(6)]
        model = build_model("ws-adapter", ENC, PRED, 0)
        before = model.fusion.logits.detach().clone()
        t_before = {k: v.clone() for k, v in teacher.state_dict().items()}
        train(model, data, TrainConfig(lr=1e-2, max_steps=5), valid_set=[])
        assert not torch.equal(before, model.fusion.logits)
        assert all(torch.equal(t_before[k], v) for k, v in teacher.state_dict().items())


class TestSerialization:
    def test_round_trip(self, tmp_path, teacher):
        model = build_model("student", ENC, PRED, 3, student_cfg=STUDENT, teacher=teacher)
        meta = {"variant": "student", "topology": STUDENT.head_topology}
        save_weights(tmp_path / "w.bin", model.state_dict(), meta)
        state, got = load_weights(tmp_path / "w.bin")
        assert got == meta
        other = build_model("student", ENC, PRED, 9, student_cfg=STUDENT)
        other.load_state_dict(state)
        for k, v in model.state_dict().items():
            assert torch.equal(v, other.state_dict()[k])

    def test_float64_exact(self, tmp_path):
        x = torch.randn(3, 4, dtype=torch.float64)
        save_weights(tmp_path / "w.bin", {"x": x, "s": torch.tensor(2.5, dtype=torch.float64)})
        state, meta = load_weights(tmp_path / "w.bin")
        assert torch.equal(state["x"], x) and state["s"].item() == 2.5 and meta == {}

    def test_deterministic_bytes(self, tmp_path):
        st = build_model("spectrogram", ENC, PRED, 0).state_dict()
        save_weights(tmp_path / "a.bin", st, {"k": 1})
        save_weights(tmp_path / "b.bin", st, {"k": 1})
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(b"nope" + bytes(20))
        with pytest.raises(WeightsFormatError):
            load_weights(tmp_path / "w.bin")

    def test_truncated(self, tmp_path):
        save_weights(tmp_path / "w.bin", {"x": torch.ones(10)})
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "w.bin").write_bytes(data[:-8])
        with pytest.raises(WeightsFormatError):
            load_weights(tmp_path / "w.bin")

    def test_version(self, tmp_path):
        save_weights(tmp_path / "w.bin", {"x": torch.ones(1)})
        data = bytearray((tmp_path / "w.bin").read_bytes())
        data[4] = 9
        (tmp_path / "w.bin").write_bytes(bytes(data))
        with pytest.raises(WeightsFormatError):
            load_weights(tmp_path / "w.bin")
