import subprocess
import sys

import numpy as np
import pytest
import torch

import oracles
from fundus2ffa.checkpoint import load_checkpoint, save_checkpoint
from fundus2ffa.errors import CheckpointError, NumericFault, ParameterError
from fundus2ffa.networks import (
    DiscriminatorConfig,
    FeatureExtractor,
    FeatureExtractorConfig,
    Generator,
    GeneratorConfig,
    PatchDiscriminator,
    discriminator_forward,
    feature_extract,
    generator_forward,
    image_discriminator_config,
    named_params,
    receptive_field,
    score_map_size,
)


# ------------------------------------------------------------- arithmetic

def test_receptive_field():
    assert receptive_field(DiscriminatorConfig()) == 70
    assert receptive_field(DiscriminatorConfig(strides=(1, 1), widths=(8, 1))) == 7
    assert receptive_field(DiscriminatorConfig(strides=(1,) * 5)) == 16
    assert receptive_field(image_discriminator_config()) >= 256


def test_single_layer_receptive_field():
    assert receptive_field(DiscriminatorConfig(strides=(1,), widths=(1,))) == 4


def test_receptive_field_recurrence():
    # prefixes of the default stack: 4, 10, 22, 46, 70
    strides = (2, 2, 2, 1, 1)
    got = [receptive_field(DiscriminatorConfig(strides=strides[:n], widths=(8,) * (n - 1) + (1,))) for n in range(1, 6)]
    assert got == [4, 10, 22, 46, 70]


@pytest.mark.parametrize("n,expected", [(64, 6), (128, 14), (256, 30)])
def test_score_map_size(n, expected):
    cfg = DiscriminatorConfig(widths=(8, 16, 32, 64, 1))
    d = PatchDiscriminator(cfg)
    with torch.no_grad():
        out = d(torch.rand(1, 3, n, n), torch.rand(1, 1, n, n))
    assert out.shape == (1, 1, expected, expected) == (1, 1, score_map_size(n, cfg), score_map_size(n, cfg))
    assert out.min() > 0 and out.max() < 1


def test_discriminator_layout():
    d = PatchDiscriminator()
    convs = [m for m in d.net if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == 5 and all(c.kernel_size == (4, 4) for c in convs)
    assert convs[-1].out_channels == 1 and isinstance(d.net[-1], torch.nn.Sigmoid)
    assert sum(isinstance(m, torch.nn.LeakyReLU) for m in d.net) == 4


def test_discriminator_shape_mismatch():
    d = PatchDiscriminator(DiscriminatorConfig(widths=(8, 8, 8, 8, 1)))
    with pytest.raises(ParameterError):
        d(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 32, 32))
    with pytest.raises(ParameterError):
        d(torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64))


def test_discriminator_config_validation():
    with pytest.raises(ParameterError):
        DiscriminatorConfig(widths=(64, 128, 256, 512, 2))
    with pytest.raises(ParameterError):
        DiscriminatorConfig(strides=(2, 2), widths=(8, 8, 1))
    with pytest.raises(ParameterError):
        DiscriminatorConfig(strides=(), widths=())


# -------------------------------------------------------------- generator

def test_generator_shape_and_range():
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=2))
    with torch.no_grad():
        out = g(torch.rand(1, 3, 256, 256))
    assert out.shape == (1, 1, 256, 256)
    assert out.min() >= 0 and out.max() <= 1


def test_generator_fully_convolutional():
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=1))
    with torch.no_grad():
        a = g(torch.rand(1, 3, 128, 128))
        b = g(torch.rand(1, 3, 256, 256))
    assert a.shape[2:] == (128, 128) and b.shape[2:] == (256, 256)


def test_generator_rejects_bad_input():
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=1))
    with pytest.raises(ParameterError):
        g(torch.rand(1, 3, 30, 32))
    with pytest.raises(ParameterError):
        g(torch.rand(1, 1, 32, 32))


def test_zero_residual_blocks_are_identity():
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=3))
    with torch.no_grad():
        for p in g.blocks.parameters():
            p.zero_()
    x = torch.rand(1, 16, 8, 8)
    with torch.no_grad():
        np.testing.assert_array_equal(g.blocks(x).numpy(), x.numpy())


def test_generator_deterministic():
    cfg = GeneratorConfig(base_width=4, n_residual_blocks=1)
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        a = Generator(cfg, seed=3)(x)
        b = Generator(cfg, seed=3)(x)
    assert torch.equal(a, b)


def test_generator_nonfinite_names_layer():
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=1))
    with torch.no_grad():
        g.down[0].weight.fill_(float("inf"))
    with pytest.raises(NumericFault, match="generator.down"):
        g(torch.rand(1, 3, 16, 16))


def test_dropout_only_when_enabled():
    assert not any(isinstance(m, torch.nn.Dropout) for m in Generator(GeneratorConfig(base_width=4)).modules())
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=2, use_dropout=True))
    assert sum(isinstance(m, torch.nn.Dropout) for m in g.modules()) == 2


def test_generator_param_gradcheck(tiny_gen_cfg, rng):
    """Autograd vs central differences (h=1e-4) of an L1 objective, double precision.

    Entries whose stencil straddles a ReLU kink are re-checked with a 10x
    finer step instead; they must stay a small minority.
    """
    torch.manual_seed(0)
    g = Generator(tiny_gen_cfg, seed=5).double()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(1, 1, 16, 16, dtype=torch.float64)

    def objective():
        return (g(x) - y).abs().mean()

    g.zero_grad()
    objective().backward()
    picks = oracles.sample_indices(list(g.parameters()), 8, rng)
    errs, kinks = [], 0
    for t, idx in picks:
        h = 1e-4
        if oracles.straddles_kink(objective, t.data, idx, h):
            kinks += 1
            h = 1e-5
        errs.append(oracles.relative_error(t.grad[idx].item(), oracles.central_difference(objective, t.data, idx, h)))
    assert kinks <= len(picks) // 10
    assert max(errs) < 1e-3


def test_array_api_roundtrip():
    cfg = GeneratorConfig(base_width=4, n_residual_blocks=1)
    g = Generator(cfg)
    img = np.random.default_rng(0).random((32, 32, 3))
    out = generator_forward(named_params(g), cfg, img)
    assert out.shape == (32, 32)
    dcfg = DiscriminatorConfig(widths=(8, 8, 8, 8, 1))
    d = PatchDiscriminator(dcfg)
    scores = discriminator_forward(named_params(d), dcfg, img, out)
    assert scores.shape == (score_map_size(32, dcfg),) * 2


# --------------------------------------------------------------- features

def test_feature_tap_dims():
    fx = FeatureExtractor(FeatureExtractorConfig(tap=(1, 2), widths=(4, 4, 4, 4, 4)))
    assert feature_extract(fx, np.zeros((256, 256))).shape == (256, 256, 4)
    fx = FeatureExtractor(FeatureExtractorConfig(tap=(3, 3), widths=(4, 6, 8, 8, 8)))
    assert feature_extract(fx, np.zeros((64, 64, 3))).shape == (16, 16, 8)


def test_feature_tap_counts_vgg19_layers():
    fx = FeatureExtractor(FeatureExtractorConfig(tap=(3, 3), widths=(4, 6, 8, 8, 8)))
    assert sum(isinstance(m, torch.nn.Conv2d) for m in fx.net) == 2 + 2 + 3
    assert sum(isinstance(m, torch.nn.MaxPool2d) for m in fx.net) == 2
    with pytest.raises(ParameterError):
        FeatureExtractorConfig(tap=(1, 3))


def test_features_frozen_and_deterministic(tiny_fx_cfg):
    fx = FeatureExtractor(tiny_fx_cfg)
    assert all(not p.requires_grad for p in fx.parameters())
    fx.train()
    assert not fx.training
    img = np.random.default_rng(1).random((32, 32))
    np.testing.assert_array_equal(feature_extract(fx, img), feature_extract(fx, img))
    np.testing.assert_array_equal(feature_extract(FeatureExtractor(tiny_fx_cfg), img), feature_extract(fx, img))


def test_features_identical_across_processes(tiny_fx_cfg):
    code = (
        "import numpy as np;"
        "from fundus2ffa.networks import FeatureExtractor, FeatureExtractorConfig, feature_extract;"
        "fx = FeatureExtractor(FeatureExtractorConfig(widths=(4, 6, 8, 8, 8), seed=7));"
        "print(feature_extract(fx, np.linspace(0, 1, 1024).reshape(32, 32)).tobytes().hex())"
    )
    runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert runs[0] == runs[1]
    here = feature_extract(FeatureExtractor(tiny_fx_cfg), np.linspace(0, 1, 1024).reshape(32, 32))
    assert runs[0].strip() == here.tobytes().hex()


def test_pretrained_weights_load(tmp_path):
    src = FeatureExtractor(FeatureExtractorConfig(tap=(2, 1), seed=3))
    state = {f"features.{i}.{k}": v for i, m in enumerate(src.net) if isinstance(m, torch.nn.Conv2d)
             for k, v in m.state_dict().items()}
    torch.save(state, tmp_path / "vgg.pth")
    fx = FeatureExtractor(FeatureExtractorConfig(mode="pretrained", tap=(2, 1), weights_path=str(tmp_path / "vgg.pth")))
    for a, b in zip(fx.net.parameters(), src.net.parameters()):
        assert torch.equal(a, b)


def test_pretrained_missing_or_corrupt(tmp_path):
    with pytest.raises(CheckpointError, match="nope.pth"):
        FeatureExtractor(FeatureExtractorConfig(mode="pretrained", weights_path=str(tmp_path / "nope.pth")))
    (tmp_path / "bad.pth").write_bytes(b"garbage")
    with pytest.raises(CheckpointError, match="bad.pth"):
        FeatureExtractor(FeatureExtractorConfig(mode="pretrained", weights_path=str(tmp_path / "bad.pth")))


# ------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    g = Generator(GeneratorConfig(base_width=4, n_residual_blocks=1))
    save_checkpoint(tmp_path / "c.ckpt", g.state_dict(), {"note": "x"})
    meta, tensors = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"note": "x"}
    assert list(tensors) == list(g.state_dict())
    for k, v in g.state_dict().items():
        assert torch.equal(tensors[k], v)


def test_checkpoint_layout(tmp_path):
    save_checkpoint(tmp_path / "c.ckpt", {"a": torch.tensor([1.0, 2.0]), "b": torch.ones(2, 3)})
    buf = (tmp_path / "c.ckpt").read_bytes()
    assert buf.startswith(b"FUNDUS2FFA-CKPT\n")
    n = int.from_bytes(buf[16:24], "little")
    assert b'"offset": 8' in buf[24:24 + n]
    blob = buf[24 + n:]
    assert len(blob) == 4 * 8
    np.testing.assert_array_equal(np.frombuffer(blob[:8], "<f4"), [1.0, 2.0])


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.ckpt")
    save_checkpoint(tmp_path / "t.ckpt", {"a": torch.ones(100)})
    buf = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(buf[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")
