import dataclasses
import math

import numpy as np
import pytest
import torch

from diffrepair.diffusion import (
    BadConfig, CorruptCheckpoint, DiffusionModel, ModelConfig, NoiseSchedule, NonFinite, TrainConfig,
    encode_corpus, forward_noise, load_checkpoint, loss, make_optimizer, make_schedule, sample, sample_many,
    save_checkpoint, train,
)
from diffrepair.diffusion.gradcheck import finite_difference_report
from diffrepair.diffusion.sampling import reverse
from diffrepair.diffusion.schedule import linear_betas
from diffrepair.diffusion.train import _lr_at, reconstruction_accuracy
from diffrepair.formula import EOS_ID, TokenSeq, tokenize

TINY = ModelConfig(vocab=12, n=6, d=8, layers_denoiser=1, layers_decoder=1, heads=2, ff_mult=2)


class TestSchedule:
    def test_two_step_arithmetic(self):
        s = NoiseSchedule.from_betas([0.1, 0.1], check=False)
        assert np.allclose(s.alpha_bar[1:], [0.9, 0.81], atol=1e-15)

    def test_zero_betas_rejected(self):
        with pytest.raises(BadConfig):
            NoiseSchedule.from_betas([0.0] * 10)

    @pytest.mark.parametrize("kind", ["linear", "sqrt"])
    def test_invariants(self, kind):
        s = make_schedule(200, kind)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert s.alpha_bar[-1] < 0.01
        assert np.all((s.beta > 0) & (s.beta < 1))
        recomputed = np.cumprod(1 - s.beta)
        assert np.max(np.abs(recomputed - s.alpha_bar[1:])) <= 1e-12

    def test_unscaled_linear_endpoints_fail_at_short_horizons(self):
        raw = linear_betas(200, rescale=False)
        assert raw[0] == 1e-4 and raw[-1] == 0.02
        with pytest.raises(BadConfig):
            NoiseSchedule.from_betas(raw)
        # the same endpoints are fine at their native horizon
        NoiseSchedule.from_betas(linear_betas(1000, rescale=False))

    def test_bad_args(self):
        with pytest.raises(BadConfig):
            make_schedule(1)
        with pytest.raises(BadConfig):
            make_schedule(100, "cosine-ish")

    def test_json_round_trip(self):
        s = make_schedule(50, "sqrt")
        again = NoiseSchedule.from_json(s.to_json())
        assert np.array_equal(again.alpha_bar, s.alpha_bar)

    def test_step_for_percent(self):
        s = make_schedule(200)
        assert [s.step_for_percent(p) for p in (0, 10, 55, 100)] == [0, 20, 110, 200]


class TestForward:
    def test_zero_noise(self):
        s = make_schedule(200)
        x0 = torch.randn(6, 8, dtype=torch.float64)
        out = forward_noise(s, x0, 37, torch.zeros_like(x0))
        assert torch.allclose(out, math.sqrt(s.alpha_bar[37]) * x0)

    def test_small_t_is_close_to_clean(self):
        s = NoiseSchedule.from_betas(np.full(300, 1e-6), check=False)
        x0 = torch.randn(6, 8, dtype=torch.float64)
        assert torch.allclose(forward_noise(s, x0, 1, torch.randn_like(x0)), x0, atol=1e-2)

    def test_inputs_untouched_and_shape_checked(self):
        s = make_schedule(200)
        x0, eps = torch.randn(4, 8), torch.randn(4, 8)
        x0c, epsc = x0.clone(), eps.clone()
        forward_noise(s, x0, 5, eps)
        assert torch.equal(x0, x0c) and torch.equal(eps, epsc)
        with pytest.raises(ValueError):
            forward_noise(s, x0, 5, torch.randn(4, 9))

    def test_per_example_t(self):
        s = make_schedule(200)
        x0, eps = torch.randn(3, 6, 8), torch.randn(3, 6, 8)
        t = torch.tensor([1, 50, 200])
        batched = forward_noise(s, x0, t, eps)
        for i in range(3):
            assert torch.allclose(batched[i], forward_noise(s, x0[i], int(t[i]), eps[i]))


def _tiny_model(dtype=torch.float64, seed=0):
    torch.manual_seed(seed)
    return DiffusionModel(TINY).to(dtype)


class TestModel:
    def test_predict_x0_shape_and_determinism(self):
        a, b = _tiny_model(seed=3), _tiny_model(seed=3)
        x = torch.randn(2, TINY.n, TINY.d, dtype=torch.float64)
        for t in (0, 1, 100):
            out = a.predict_x0(x, t)
            assert out.shape == x.shape
            assert torch.equal(out, b.predict_x0(x, t))

    def test_decode_contracts(self):
        model = _tiny_model()
        with torch.no_grad():
            model.H.weight.zero_()
            model.H.bias.zero_()
            model.H.bias[EOS_ID] = 5.0
        _, seqs = model.decode(torch.randn(3, TINY.n, TINY.d, dtype=torch.float64))
        assert all(s.k == 0 for s in seqs)
        with torch.no_grad():
            model.H.bias.zero_()
            model.H.bias[7] = 5.0
        logits, seq = model.decode(torch.randn(TINY.n, TINY.d, dtype=torch.float64))
        assert logits.shape == (TINY.n, TINY.vocab)
        assert seq.k == TINY.n - 1 and seq.ids[-1] == EOS_ID

    def test_loss_nonnegative_and_perfect_oracle(self):
        model = _tiny_model()
        s = make_schedule(50)
        ids = torch.tensor([[3, 4, 5, EOS_ID, 0, 0]])
        eps = torch.randn(1, TINY.n, TINY.d, dtype=torch.float64)
        assert all(v >= 0 for v in loss(model, s, ids, 10, eps).values())

        class Oracle(DiffusionModel):
            def loss_parts(self, ids, x_t_fn, t, use_prev=None):
                x0 = self.E(ids)
                x0_hat = x0  # N recovers x_0 exactly
                decoded = x0_hat  # D reproduces E(c)
                logits = torch.full(ids.shape + (self.cfg.vocab,), -1e4, dtype=x0.dtype)
                logits.scatter_(-1, ids[..., None], 1e4)
                ce = torch.nn.functional.cross_entropy(logits.reshape(-1, self.cfg.vocab), ids.reshape(-1))
                return (x0_hat - x0).pow(2).mean(), (decoded - x0).pow(2).mean(), ce

        oracle = Oracle(TINY).to(torch.float64)
        parts = loss(oracle, s, ids, 10, eps)
        assert parts.denoise.item() == 0 and parts.decode.item() == 0 and parts.ce.item() < 1e-6

    def test_t_range_checked(self):
        model = _tiny_model()
        ids = torch.tensor([[3, EOS_ID, 0, 0, 0, 0]])
        eps = torch.randn(1, TINY.n, TINY.d, dtype=torch.float64)
        with pytest.raises(ValueError):
            loss(model, make_schedule(50), ids, 0, eps)
        with pytest.raises(ValueError):
            loss(model, make_schedule(50), ids, 51, eps)

    def test_nonfinite_raises(self):
        model = _tiny_model()
        with torch.no_grad():
            model.H.weight.fill_(float("nan"))
        ids = torch.tensor([[3, EOS_ID, 0, 0, 0, 0]])
        eps = torch.randn(1, TINY.n, TINY.d, dtype=torch.float64)
        with pytest.raises(NonFinite):
            loss(model, make_schedule(50), ids, 3, eps, step=7)


def gradient_report(seed: int = 0) -> dict[str, float]:
    model = _tiny_model(seed=seed)
    s = make_schedule(50)
    g = torch.Generator().manual_seed(seed)
    ids = torch.tensor([[3, 4, 5, EOS_ID, 0, 0], [7, 2, 9, 10, EOS_ID, 0]])
    eps = torch.randn(2, TINY.n, TINY.d, generator=g, dtype=torch.float64)
    return finite_difference_report(model, lambda: loss(model, s, ids, torch.tensor([5, 40]), eps).total, seed=seed)


def test_gradients_match_finite_differences():
    worst = gradient_report()
    assert set(worst) == {"E", "N", "D", "H"}
    assert all(v < 1e-3 for v in worst.values()), worst


class TestTraining:
    def test_zero_steps_is_identity(self):
        model = _tiny_model(torch.float32)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        data = torch.tensor([[3, 4, EOS_ID, 0, 0, 0]])
        train(model, make_schedule(50), data, TrainConfig(steps=0))
        assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train(_tiny_model(torch.float32), make_schedule(50), torch.zeros(0, 6, dtype=torch.long), TrainConfig())

    def test_deterministic_and_resumable(self, tmp_path):
        data = encode_corpus(["=SUM(A1)", "=ABS(B2)", "=1+2", '=LEN("ab")'], 12)
        cfg = ModelConfig(n=12, d=16, layers_denoiser=1, layers_decoder=1, heads=2, ff_mult=2)
        s = make_schedule(20)
        tcfg = TrainConfig(steps=30, batch=4, lr=1e-3, seed=5, log_every=10, warmup=5)

        def fresh():
            torch.manual_seed(0)
            return DiffusionModel(cfg)

        full = fresh()
        r_full = train(full, s, data, tcfg)

        half = fresh()
        opt = make_optimizer(half, tcfg)
        train(half, s, data, TrainConfig(**{**tcfg.to_json(), "steps": 12}), opt)
        save_checkpoint(tmp_path / "half.ckpt", half, s, 12, opt)
        ck = load_checkpoint(tmp_path / "half.ckpt")
        opt2 = make_optimizer(ck.model, tcfg)
        ck.load_optimizer(opt2)
        r_resumed = train(ck.model, ck.schedule, data, tcfg, opt2, start_step=ck.step)
        assert r_resumed.step == 30
        for k, v in full.state_dict().items():
            assert torch.equal(v, ck.model.state_dict()[k]), k
        assert r_full.log[-1] == r_resumed.log[-1]

        again = fresh()
        r_again = train(again, s, data, tcfg)
        assert r_again.log == r_full.log

    def test_overfit_single_snippet(self):
        seq = tokenize("=SUM(A1:B2)", 16)
        cfg = ModelConfig(n=16, d=32, layers_denoiser=2, layers_decoder=1, heads=4)
        torch.manual_seed(0)
        model = DiffusionModel(cfg)
        s = make_schedule(200)
        data = torch.tensor([seq.ids])
        train(model, s, data, TrainConfig(steps=1000, batch=16, lr=2e-3, warmup=20))
        assert reconstruction_accuracy(model, s, seq, t=1) >= 0.99
        with torch.no_grad():
            x0 = model.embed(torch.tensor([seq.ids]))
            _, decoded = model.decode(x0)
            assert decoded[0] == seq
            pred = model.predict_x0(forward_noise(s, x0, 1, torch.randn_like(x0)), 1)
            assert (pred - x0).norm() <= 0.1 * x0.norm()


class TestCheckpoint:
    def test_round_trip_and_bytes(self, tmp_path):
        torch.manual_seed(1)
        model = DiffusionModel(ModelConfig(n=8, d=16, layers_denoiser=1, layers_decoder=1, heads=2))
        s = make_schedule(30, "sqrt")
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, model, s, 7, lineage={"root": 3})
        save_checkpoint(b, model, s, 7, lineage={"root": 3})
        assert a.read_bytes() == b.read_bytes()
        raw = a.read_bytes()
        assert raw[:8] == b"DIFFREP\x00"
        ck = load_checkpoint(a)
        assert ck.step == 7 and ck.header["lineage"] == {"root": 3}
        assert np.array_equal(ck.schedule.alpha_bar, s.alpha_bar)
        for k, v in model.state_dict().items():
            assert torch.equal(v, ck.model.state_dict()[k])

    def test_corruption_detected(self, tmp_path):
        torch.manual_seed(1)
        model = DiffusionModel(ModelConfig(n=8, d=16, layers_denoiser=1, layers_decoder=1, heads=2))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, make_schedule(30))
        raw = path.read_bytes()
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTACKPT" + raw[8:])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(bad)
        bad.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(bad)


@pytest.fixture(scope="module")
def small_model():
    torch.manual_seed(2)
    return DiffusionModel(ModelConfig(n=10, d=16, layers_denoiser=1, layers_decoder=1, heads=2)).eval()


class TestSampling:
    @pytest.fixture
    def model(self, small_model):
        return small_model

    def test_same_seed_same_trajectory(self, model):
        s = make_schedule(40)
        assert sample(model, s, 11, 5) == sample(model, s, 11, 5)

    def test_structure(self, model):
        s = make_schedule(40)
        traj = sample(model, s, 0, 7)
        ts = [t for t, _ in traj.steps]
        assert ts == sorted(set(ts), reverse=True) and ts[-1] == 0
        assert all(t % 7 == 0 for t in ts)
        assert traj.final == traj.at(0)
        for _, seq in traj.steps:
            assert isinstance(seq, TokenSeq)

    def test_batch_matches_single(self, model):
        s = make_schedule(40)
        batch = sample_many(model, s, [1, 2, 3], 10)
        assert [t.final for t in batch] == [sample(model, s, k, 10).final for k in (1, 2, 3)]

    def test_bad_stride(self, model):
        with pytest.raises(ValueError):
            sample(model, make_schedule(40), 0, 0)

    @pytest.mark.parametrize("sampler", ["literal", "rounded"])
    def test_reverse_step_rule(self, model, sampler):
        m = DiffusionModel(dataclasses.replace(model.cfg, sampler=sampler)).eval()
        m.load_state_dict(model.state_dict())
        s = make_schedule(40)
        x = torch.randn(1, 10, 16, generator=torch.Generator().manual_seed(0))
        finals, _ = reverse(m, s, x, 2, [torch.Generator().manual_seed(5)])
        g = torch.Generator().manual_seed(5)
        with torch.no_grad():
            for t in (2, 1):
                x0 = m.predict_x0(x, t)
                if sampler == "rounded":
                    x0 = m.E(m.logits(x0).argmax(-1))
                a = float(s.alpha_bar[t])
                x = a ** 0.5 * x0 + (1 - a) ** 0.5 * torch.randn(10, 16, generator=g)[None]
            _, expect = m.decode(m.predict_x0(x, 0))
        assert finals == expect

    def test_unknown_sampler(self):
        with pytest.raises(ValueError):
            ModelConfig(sampler="ancestral")


class TestSelfConditioning:
    cfg = dataclasses.replace(TINY, self_condition=True)

    def _model(self, seed=0, dtype=torch.float64):
        torch.manual_seed(seed)
        return DiffusionModel(self.cfg).to(dtype)

    def test_gradients(self):
        model = self._model()
        s = make_schedule(50)
        g = torch.Generator().manual_seed(1)
        ids = torch.tensor([[3, 4, 5, EOS_ID, 0, 0], [7, 2, 9, 10, EOS_ID, 0]])
        eps = torch.randn(2, TINY.n, TINY.d, generator=g, dtype=torch.float64)
        prev = torch.randn(2, TINY.n, TINY.d, generator=g, dtype=torch.float64)
        t = torch.tensor([5, 40])

        def f():
            x0_hat = model.predict_x0(forward_noise(s, model.embed(ids), t, eps), t, prev)
            return loss(model, s, ids, t, eps).total + (x0_hat ** 2).mean()

        worst = finite_difference_report(model, f)
        assert all(v < 1e-3 for v in worst.values()), worst

    def test_previous_estimate_matters(self):
        model = self._model()
        x = torch.randn(1, TINY.n, TINY.d, dtype=torch.float64)
        with torch.no_grad():
            assert not torch.allclose(model.predict_x0(x, 3), model.predict_x0(x, 3, torch.ones_like(x)))

    def test_training_and_sampling_are_deterministic(self):
        data = torch.tensor([[3, 4, EOS_ID, 0, 0, 0], [5, 6, 7, EOS_ID, 0, 0]])
        runs = []
        for _ in range(2):
            model = self._model(dtype=torch.float32)
            train(model, make_schedule(20), data, TrainConfig(steps=5, batch=2))
            runs.append(model)
        for a, b in zip(runs[0].state_dict().values(), runs[1].state_dict().values()):
            assert torch.equal(a, b)
        s = make_schedule(20)
        assert sample(runs[0], s, 4, 5) == sample(runs[1], s, 4, 5)
        batch = sample_many(runs[0], s, [1, 2], 5)
        assert [t.final for t in batch] == [sample(runs[0], s, k, 5).final for k in (1, 2)]

    def test_checkpoint_keeps_flag(self, tmp_path):
        model = self._model(dtype=torch.float32)
        save_checkpoint(tmp_path / "m.ckpt", model, make_schedule(20))
        back = load_checkpoint(tmp_path / "m.ckpt").model
        assert back.cfg.self_condition
        assert ModelConfig.from_json({"n": 6, "d": 8}).self_condition is False


def test_cosine_decay():
    cfg = TrainConfig(steps=110, lr=1.0, warmup=10, decay="cosine")
    assert _lr_at(cfg, 0) == pytest.approx(0.1)
    assert _lr_at(cfg, 10) == pytest.approx(1.0)
    assert _lr_at(cfg, 60) == pytest.approx(0.5)
    assert _lr_at(cfg, 109) < 0.001
    assert _lr_at(TrainConfig(lr=1.0, warmup=0), 5000) == 1.0
    with pytest.raises(ValueError):
        TrainConfig(decay="step")
