"""Alternating discriminator / generator optimisation and inference."""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import check_shapes, load_checkpoint, save_checkpoint
from .errors import CheckpointError, NumericFault, ParameterError
from .image_core import as_image, write_png
from .losses import (
    GRAD_MODES,
    LossReport,
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    perceptual_loss,
    pixel_l1,
    saliency_loss,
    total_loss,
    weighted_total,
)
from .metrics import SSIMParams, psnr, ssim
from .networks import (
    DiscriminatorConfig,
    FeatureExtractor,
    FeatureExtractorConfig,
    Generator,
    GeneratorConfig,
    PatchDiscriminator,
    image_to_tensor,
    tensor_to_image,
)
from .saliency import SaliencyConfig, compute_saliency

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    decay_start_epoch: int = 100
    lr0: float = 2e-4
    lr_d0: float | None = None  # discriminator base rate; None -> lr0
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    grad_mode: str = "detached"
    checkpoint_every: int = 10
    max_grad_norm: float | None = None
    n_samples: int = 4

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not 0 <= self.decay_start_epoch < self.epochs:
            raise ParameterError("decay_start_epoch must lie in [0, epochs)")
        if self.lr0 < 0 or (self.lr_d0 is not None and self.lr_d0 < 0):
            raise ParameterError("learning rates must be >= 0")
        if self.batch_size != 1:
            raise ParameterError("only batch_size 1 is supported")
        if self.grad_mode not in GRAD_MODES:
            raise ParameterError(f"grad_mode must be one of {GRAD_MODES}")
        if self.checkpoint_every < 1:
            raise ParameterError("checkpoint_every must be >= 1")


def lr_schedule(epoch: int, cfg: TrainConfig, lr0: float | None = None) -> float:
    """Constant ``lr0`` up to ``decay_start_epoch``, then linear to 0 at ``epochs``."""
    lr0 = cfg.lr0 if lr0 is None else lr0
    if not 1 <= epoch <= cfg.epochs:
        raise ParameterError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if epoch <= cfg.decay_start_epoch:
        return lr0
    return lr0 * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


@dataclass
class RunLog:
    losses: list = field(default_factory=list)  # (iteration, LossReport)
    epochs: list = field(default_factory=list)  # (epoch, lr, val_psnr, val_ssim)

    EPOCH_HEADER = "epoch,lr,val_psnr,val_ssim"


def _content_key(arr) -> str:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    return hashlib.sha1(a.tobytes() + str(a.shape).encode()).hexdigest()


class Trainer:
    """Owns both networks, their Adam optimisers and the target-saliency cache."""

    def __init__(
        self,
        cfg: TrainConfig = TrainConfig(),
        gen_cfg: GeneratorConfig = GeneratorConfig(),
        disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
        fx_cfg: FeatureExtractorConfig = FeatureExtractorConfig(),
        dtype=torch.float32,
    ):
        self.cfg, self.gen_cfg, self.disc_cfg, self.fx_cfg = cfg, gen_cfg, disc_cfg, fx_cfg
        self.dtype = dtype
        torch.manual_seed(cfg.seed)
        self.gen = Generator(gen_cfg, seed=cfg.seed).to(dtype)
        self.disc = PatchDiscriminator(disc_cfg, seed=cfg.seed + 1).to(dtype)
        self.fx = FeatureExtractor(fx_cfg).to(dtype)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=cfg.lr0, betas=betas, eps=cfg.adam_eps)
        lr_d0 = cfg.lr0 if cfg.lr_d0 is None else cfg.lr_d0
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=lr_d0, betas=betas, eps=cfg.adam_eps)
        self.epoch = 0  # last completed epoch
        self.iteration = 0
        self._sal_cache = {}

    # ---------------------------------------------------------------- steps

    def set_epoch_lr(self, epoch: int) -> float:
        lr_g = lr_schedule(epoch, self.cfg)
        lr_d = lr_schedule(epoch, self.cfg, self.cfg.lr0 if self.cfg.lr_d0 is None else self.cfg.lr_d0)
        for g in self.opt_g.param_groups:
            g["lr"] = lr_g
        for g in self.opt_d.param_groups:
            g["lr"] = lr_d
        return lr_g

    def target_saliency(self, angiography) -> torch.Tensor:
        key = _content_key(angiography)
        if key not in self._sal_cache:
            smap = compute_saliency(angiography, self.cfg.saliency).data
            self._sal_cache[key] = torch.as_tensor(smap, dtype=self.dtype)[None, None]
        return self._sal_cache[key]

    def generator_terms(self, x, y, target_sal, fake=None):
        """Forward the generator objective; returns ``(fake, dict of term tensors)``."""
        if fake is None:
            fake = self.gen(x)
        terms = {
            "gan": adversarial_g_loss(self.disc(x, fake)),
            "pixel": pixel_l1(fake, y),
            "perceptual": perceptual_loss(fake, y, self.fx),
            "saliency": saliency_loss(fake, target_sal, self.cfg.saliency, self.cfg.grad_mode),
        }
        return fake, terms

    def train_step(self, structure, angiography) -> LossReport:
        """One discriminator update followed by one generator update."""
        x = image_to_tensor(as_image(structure, 3), self.dtype)
        y = image_to_tensor(as_image(angiography, 1), self.dtype)
        target_sal = self.target_saliency(angiography)
        self.gen.train(self.gen_cfg.use_dropout)

        d_backup = (copy.deepcopy(self.disc.state_dict()), copy.deepcopy(self.opt_d.state_dict()))
        fake = self.gen(x)
        loss_d = adversarial_d_loss(self.disc(x, y), self.disc(x, fake.detach()))
        if not torch.isfinite(loss_d):
            raise NumericFault(f"discriminator loss is not finite ({loss_d.item()})", term="discriminator")
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self._clip(self.disc)
        self.opt_d.step()

        self.disc.requires_grad_(False)
        try:
            _, terms = self.generator_terms(x, y, target_sal, fake)
            total = weighted_total(**terms, w=self.cfg.loss_weights)
        except NumericFault:
            self.disc.load_state_dict(d_backup[0])
            self.opt_d.load_state_dict(d_backup[1])
            raise
        finally:
            self.disc.requires_grad_(True)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self._clip(self.gen)
        self.opt_g.step()
        self._assert_finite_params()
        self.iteration += 1
        return total_loss(**{k: v.item() for k, v in terms.items()}, w=self.cfg.loss_weights)

    def _clip(self, module):
        if self.cfg.max_grad_norm:
            torch.nn.utils.clip_grad_norm_(module.parameters(), self.cfg.max_grad_norm)

    def _assert_finite_params(self):
        for net_name, net in (("generator", self.gen), ("discriminator", self.disc)):
            for name, p in net.named_parameters():
                if not torch.isfinite(p).all():
                    raise NumericFault(f"{net_name}.{name} became non-finite", term=f"{net_name}.{name}")

    # ------------------------------------------------------------ inference

    def translate(self, structure) -> np.ndarray:
        self.gen.eval()
        with torch.no_grad():
            return tensor_to_image(self.gen(image_to_tensor(as_image(structure, 3), self.dtype)))

    def validate(self, pairs, ssim_params=SSIMParams()):
        if not pairs:
            return float("nan"), float("nan")
        ps, ss = [], []
        for p in pairs:
            pred = self.translate(p.structure)
            ps.append(psnr(pred, p.angiography))
            ss.append(ssim(pred, p.angiography, ssim_params))
        finite = [v for v in ps if np.isfinite(v)]
        return (float(np.mean(finite)) if finite else float("inf")), float(np.mean(ss))

    # ---------------------------------------------------------- checkpoints

    def state_tensors(self):
        out = {}
        for prefix, net in (("generator", self.gen), ("discriminator", self.disc)):
            for k, v in net.state_dict().items():
                out[f"{prefix}/{k}"] = v
        for prefix, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            for idx, st in opt.state_dict()["state"].items():
                for k, v in st.items():
                    out[f"{prefix}/{idx}/{k}"] = torch.as_tensor(v)
        return out

    def save(self, path, run_config: dict | None = None):
        meta = {"epoch": self.epoch, "iteration": self.iteration, "config": run_config or {}}
        save_checkpoint(path, self.state_tensors(), meta)

    def load_state(self, tensors, path="checkpoint"):
        for prefix, net in (("generator", self.gen), ("discriminator", self.disc)):
            sub = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + "/")}
            check_shapes(net.state_dict(), sub, prefix, path)
            net.load_state_dict({k: v.to(self.dtype) for k, v in sub.items()})
        for prefix, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            sd = opt.state_dict()
            state = {}
            for k, v in tensors.items():
                if k.startswith(prefix + "/"):
                    _, idx, name = k.split("/")
                    state.setdefault(int(idx), {})[name] = v.to(self.dtype) if name != "step" else v.float()
            sd["state"] = state
            opt.load_state_dict(sd)


def _write_csv_row(path, header, row):
    new = not path.exists()
    with open(path, "a") as f:
        if new:
            f.write(header + "\n")
        f.write(row + "\n")


def fit(trainer: Trainer, train_pairs, test_pairs=(), out_dir=None, run_config: dict | None = None,
        ssim_params=SSIMParams()) -> RunLog:
    """Run epochs ``trainer.epoch + 1 .. cfg.epochs`` over ``train_pairs``.

    With ``out_dir`` set, streams ``losses.csv`` / ``epochs.csv`` and writes
    checkpoints plus sample translations at the configured cadence.
    """
    cfg = trainer.cfg
    train_pairs = list(train_pairs)
    if not train_pairs:
        raise ParameterError("training set is empty")
    runlog = RunLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    for epoch in range(trainer.epoch + 1, cfg.epochs + 1):
        lr = trainer.set_epoch_lr(epoch)
        # order depends only on (seed, epoch), so resumed runs replay it exactly
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_pairs))
        for i in order:
            p = train_pairs[i]
            try:
                report = trainer.train_step(p.structure, p.angiography)
            except NumericFault:
                if out is not None:
                    trainer.save(out / "checkpoints" / "last_good.ckpt", run_config)
                raise
            runlog.losses.append((trainer.iteration, report))
            if out is not None:
                _write_csv_row(out / "losses.csv", LossReport.CSV_HEADER, report.csv_row(trainer.iteration))
        trainer.epoch = epoch
        vp, vs = trainer.validate(list(test_pairs), ssim_params)
        runlog.epochs.append((epoch, lr, vp, vs))
        log.info("epoch %d lr %.3g loss %.4f val psnr %.3f ssim %.4f", epoch, lr, report.total, vp, vs)
        if out is not None:
            _write_csv_row(out / "epochs.csv", RunLog.EPOCH_HEADER, f"{epoch},{lr!r},{vp!r},{vs!r}")
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                trainer.save(out / "checkpoints" / f"epoch_{epoch:04d}.ckpt", run_config)
                sample_dir = out / "samples" / f"epoch_{epoch:04d}"
                sample_dir.mkdir(parents=True, exist_ok=True)
                for p in (list(test_pairs) or train_pairs)[: cfg.n_samples]:
                    write_png(sample_dir / f"{p.id}.png", trainer.translate(p.structure))
    if out is not None:
        trainer.save(out / "checkpoints" / "final.ckpt", run_config)
    return runlog


def load_generator(path) -> Generator:
    """Rebuild the generator stored in a training checkpoint."""
    from .config import RunConfig  # circular at import time

    meta, tensors = load_checkpoint(path)
    try:
        run = RunConfig.from_dict(meta.get("config", {}))
    except ParameterError as exc:
        raise CheckpointError(f"{path}: bad embedded config ({exc})") from exc
    gen = Generator(run.generator)
    sub = {k[len("generator/"):]: v for k, v in tensors.items() if k.startswith("generator/")}
    check_shapes(gen.state_dict(), sub, "generator", path)
    gen.load_state_dict(sub)
    gen.eval()
    return gen


def translate(checkpoint, img) -> np.ndarray:
    """Deterministic inference with the generator from ``checkpoint`` (path or module)."""
    gen = checkpoint if isinstance(checkpoint, Generator) else load_generator(checkpoint)
    gen.eval()
    with torch.no_grad():
        return tensor_to_image(gen(image_to_tensor(as_image(img, gen.cfg.in_channels))))
