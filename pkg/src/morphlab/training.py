"""Adversarial training: baseline critic game, then identity finetuning.

The baseline phase plays the joint-pair Wasserstein game with gradient
penalties: the critic updates every step, the encoder/decoder pair every
fifth step.  Finetuning keeps the same game and adds reconstruction and
morph-target terms computed through a frozen recognition backend, with
worst-case targets built per batch from live embeddings.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from . import checkpoint as ckpt
from .manifest import RunManifest
from .nets import Decoder, Encoder, Critic, NetworkConfig, reparameterize


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite or past the divergence limit."""


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    critic_updates_per_gen: int = 5
    baseline_epochs: int = 60       # paper-scale runs use 400
    finetune_epochs: int = 15       # paper-scale runs use 85
    lr_critic: float = 1e-4
    lr_generator: float = 1e-4
    adam_betas: tuple = (0.5, 0.9)
    divergence_limit: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (morph pairing needs pairs)")
        if self.critic_updates_per_gen < 1:
            raise ValueError("critic_updates_per_gen must be >= 1")


def morph_pairing(n: int) -> np.ndarray:
    """Partner indices (2, ..., N, 1): pairs each sample with the next,
    wrapping the last to the first.  A derangement for every n >= 2."""
    if n < 2:
        raise ValueError("pairing needs a batch of at least 2")
    return np.roll(np.arange(n), -1)


@dataclass
class TrainState:
    cfg: TrainingConfig
    net_cfg: NetworkConfig
    encoder: Encoder
    decoder: Decoder
    critic: Critic
    opt_critic: torch.optim.Optimizer
    opt_encoder: torch.optim.Optimizer
    opt_decoder: torch.optim.Optimizer
    rng: torch.Generator
    step: int = 0
    history: list = field(default_factory=list)
    run_dir: Path | None = None

    def modules(self):
        return {"encoder": self.encoder, "decoder": self.decoder,
                "critic": self.critic}


def init_state(cfg: TrainingConfig, net_cfg: NetworkConfig,
               run_dir=None) -> TrainState:
    torch.manual_seed(cfg.seed)
    encoder, decoder, critic = Encoder(net_cfg), Decoder(net_cfg), Critic(net_cfg)
    rng = torch.Generator().manual_seed(cfg.seed)
    return TrainState(
        cfg=cfg, net_cfg=net_cfg,
        encoder=encoder, decoder=decoder, critic=critic,
        opt_critic=torch.optim.Adam(critic.parameters(), lr=cfg.lr_critic,
                                    betas=cfg.adam_betas),
        opt_encoder=torch.optim.Adam(encoder.parameters(), lr=cfg.lr_generator,
                                     betas=cfg.adam_betas),
        opt_decoder=torch.optim.Adam(decoder.parameters(), lr=cfg.lr_generator,
                                     betas=cfg.adam_betas),
        rng=rng,
        run_dir=Path(run_dir) if run_dir is not None else None,
    )


def _as_batch_tensor(batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        x = batch
    else:
        x = torch.from_numpy(np.ascontiguousarray(
            np.asarray(batch).transpose(0, 3, 1, 2), dtype=np.float32))
    if x.shape[0] < 2:
        raise ValueError("batch must contain at least 2 samples")
    return x


def _guard(state: TrainState, record: dict):
    bad = [k for k, v in record.items()
           if isinstance(v, float) and (not np.isfinite(v) or abs(v) > state.cfg.divergence_limit)]
    if bad:
        snapshot = None
        if state.run_dir is not None:
            state.run_dir.mkdir(parents=True, exist_ok=True)
            snapshot = state.run_dir / f"diverged_step{state.step:07d}.bin"
            ckpt.save_checkpoint(snapshot, {"step": state.step, "record": record},
                                 ckpt.modules_to_records(state.modules()))
            (state.run_dir / "diverged.json").write_text(
                json.dumps({"step": state.step, "record": record, "bad_terms": bad},
                           sort_keys=True, indent=2))
        raise TrainingDivergedError(
            f"step {state.step}: non-finite or exploding terms {bad}"
            + (f"; snapshot at {snapshot}" if snapshot else ""))


def _critic_update(state: TrainState, x_real: torch.Tensor, w: L.LossWeights) -> dict:
    cfg = state.net_cfg
    n = x_real.shape[0]
    z_fake = torch.randn(n, cfg.latent_dim, generator=state.rng)
    eps = torch.randn(n, cfg.latent_dim, generator=state.rng)
    with torch.no_grad():
        z_real = reparameterize(state.encoder(x_real), eps)
        x_fake = state.decoder(z_fake)
    s_real = state.critic(x_real, z_real).mean()
    s_fake = state.critic(x_fake, z_fake).mean()
    x_hat, z_hat = L.interpolate_pairs(x_real, x_fake, z_real, z_fake,
                                       generator=state.rng)
    r_x, r_z, norm_x, norm_z = L.joint_gradient_penalty(state.critic, x_hat, z_hat)
    record = {
        "s_real": float(s_real.detach()), "s_fake": float(s_fake.detach()),
        "r_x": float(r_x.detach()), "r_z": float(r_z.detach()),
        "grad_norm_x": norm_x, "grad_norm_z": norm_z,
        "critic_gap": abs(float(s_real.detach()) - float(s_fake.detach())),
    }
    _guard(state, record)
    loss = L.critic_loss(s_fake, s_real, r_x, r_z, w)
    state.opt_critic.zero_grad()
    loss.backward()
    state.opt_critic.step()
    record["critic_total"] = float(loss.detach())
    return record


def _generator_terms_baseline(state: TrainState, x_real: torch.Tensor):
    cfg = state.net_cfg
    n = x_real.shape[0]
    z_fake = torch.randn(n, cfg.latent_dim, generator=state.rng)
    eps = torch.randn(n, cfg.latent_dim, generator=state.rng)
    z_real = reparameterize(state.encoder(x_real), eps)
    x_fake = state.decoder(z_fake)
    s_real = state.critic(x_real, z_real).mean()
    s_fake = state.critic(x_fake, z_fake).mean()
    return {L.ADVERSARIAL: L.generator_adv_loss(s_fake, s_real)}


def _generator_update(state: TrainState, terms: dict, w: L.LossWeights) -> dict:
    _guard(state, {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
                   for k, v in terms.items()})
    total = L.weighted_total(terms, w)
    state.opt_encoder.zero_grad()
    state.opt_decoder.zero_grad()
    total.backward()
    state.opt_encoder.step()
    state.opt_decoder.step()
    report = L.combined_generator_loss(terms, w)
    record = dict(report.terms)
    record["generator_total"] = report.total
    return record


def baseline_step(state: TrainState, batch, w: L.LossWeights = None) -> dict:
    """One critic update, plus a generator update every
    critic_updates_per_gen-th call."""
    w = w or L.LossWeights()
    x_real = _as_batch_tensor(batch)
    record = _critic_update(state, x_real, w)
    if (state.step + 1) % state.cfg.critic_updates_per_gen == 0:
        record.update(_generator_update(
            state, _generator_terms_baseline(state, x_real), w))
    state.step += 1
    _guard(state, record)
    state.history.append(record)
    return record


def finetune_step(state: TrainState, batch, fr, w: L.LossWeights) -> dict:
    """Baseline game plus reconstruction and worst-case-morph terms.

    Terms with zero weight are skipped entirely, so a zero gamma vector
    reduces the generator update to the baseline adversarial one.
    """
    x_real = _as_batch_tensor(batch)
    record = _critic_update(state, x_real, w)
    if (state.step + 1) % state.cfg.critic_updates_per_gen == 0:
        terms = _generator_terms_baseline(state, x_real)
        need_recon = w.gamma_for(L.PIXEL) > 0 or w.gamma_for(L.FFL) > 0 \
            or w.gamma_for(L.FR) > 0
        need_morph = w.gamma_for(L.FR_MORPH) > 0 or w.gamma_for(L.FR_MORPH_ALPHA) > 0
        mu = state.encoder(x_real).mu if (need_recon or need_morph) else None
        if need_recon:
            x_recon = state.decoder(mu)
            if w.gamma_for(L.PIXEL) > 0:
                terms[L.PIXEL] = L.pixel_loss(x_real, x_recon)
            if w.gamma_for(L.FFL) > 0:
                terms[L.FFL] = L.focal_frequency_loss(x_real, x_recon)
            if w.gamma_for(L.FR) > 0:
                terms[L.FR] = L.fr_recon_loss(fr.embed_tensor, x_real, x_recon)
        if need_morph:
            j = torch.from_numpy(morph_pairing(x_real.shape[0]))
            with torch.no_grad():
                y = fr.embed_tensor(x_real)

            def morph_term(alpha: float):
                z_m = alpha * mu + (1.0 - alpha) * mu[j]
                target = alpha * y + (1.0 - alpha) * y[j]
                target = torch.nn.functional.normalize(target, p=2, dim=1)
                return L.fr_morph_alpha_loss(fr.embed_tensor,
                                             state.decoder(z_m), target)

            if w.gamma_for(L.FR_MORPH) > 0:
                terms[L.FR_MORPH] = morph_term(0.5)
            if w.gamma_for(L.FR_MORPH_ALPHA) > 0:
                alpha = float(torch.rand((), generator=state.rng))
                terms[L.FR_MORPH_ALPHA] = morph_term(alpha)
        record.update(_generator_update(state, terms, w))
    state.step += 1
    _guard(state, record)
    state.history.append(record)
    return record


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def write_loss_csv(path, history, start_step: int = 0):
    """Long-format loss curves: step, term, value."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "term", "value"])
        for i, record in enumerate(history):
            for term in sorted(record):
                writer.writerow([start_step + i, term, repr(float(record[term]))])


def save_models(state: TrainState, path, phase: str):
    net = state.net_cfg
    config = {
        "phase": phase,
        "net": {"image_size": net.image_size, "channels": net.channels,
                "latent_dim": net.latent_dim, "base_width": net.base_width,
                "fr_dim": net.fr_dim},
        "step": state.step,
    }
    ckpt.save_checkpoint(path, config, ckpt.modules_to_records(state.modules()))


def load_models(path):
    config, params = ckpt.load_checkpoint(path)
    net_cfg = NetworkConfig(**config["net"])
    encoder, decoder, critic = Encoder(net_cfg), Decoder(net_cfg), Critic(net_cfg)
    ckpt.load_into_modules(params, {"encoder": encoder, "decoder": decoder,
                                    "critic": critic})
    return config, net_cfg, encoder, decoder, critic


def _config_snapshot(cfg, net_cfg, w, **extra):
    snap = {
        "training": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in vars(cfg).items()},
        "net": {k: v for k, v in vars(net_cfg).items()},
        "loss_weights": {"lambda_gp": w.lambda_gp, "gamma": list(w.gamma)},
    }
    snap.update(extra)
    return snap


def _prepare_run_dir(out_dir, config_snapshot):
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "logs").mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config_snapshot, sort_keys=True, indent=2) + "\n")
    return out_dir


def _finish_run(out_dir, command, config_snapshot, seed, artifacts, t0):
    man = RunManifest(command=command, config=config_snapshot, seed=seed,
                      wall_clock_sec=time.monotonic() - t0)
    for a in artifacts:
        man.add_artifact(Path(a).relative_to(out_dir))
    man.write(out_dir)


def train(cfg: TrainingConfig, net_cfg: NetworkConfig, w: L.LossWeights,
          images: np.ndarray, out_dir, fr=None,
          baseline_only: bool = False) -> dict:
    """Full schedule: baseline epochs, then finetuning epochs.

    Emits config.json, manifest.json, checkpoints/{baseline,finetune}.bin
    and logs/losses.csv under out_dir; returns the artifact paths.
    """
    if len(images) < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    if not baseline_only and fr is None:
        raise ValueError("finetuning requires a recognition backend")
    t0 = time.monotonic()
    config_snapshot = _config_snapshot(
        cfg, net_cfg, w, baseline_only=baseline_only,
        fr_backend=getattr(fr, "id", None))
    out_dir = _prepare_run_dir(out_dir, config_snapshot)

    state = init_state(cfg, net_cfg, run_dir=out_dir)
    data_rng = np.random.default_rng(cfg.seed)
    x_all = torch.from_numpy(np.ascontiguousarray(
        images.transpose(0, 3, 1, 2), dtype=np.float32))

    for _ in range(cfg.baseline_epochs):
        for idx in _epoch_batches(len(images), cfg.batch_size, data_rng):
            baseline_step(state, x_all[idx], w)
    baseline_path = out_dir / "checkpoints" / "baseline.bin"
    save_models(state, baseline_path, phase="baseline")

    artifacts = [out_dir / "config.json", baseline_path,
                 out_dir / "logs" / "losses.csv"]
    finetune_path = None
    if not baseline_only:
        for _ in range(cfg.finetune_epochs):
            for idx in _epoch_batches(len(images), cfg.batch_size, data_rng):
                finetune_step(state, x_all[idx], fr, w)
        finetune_path = out_dir / "checkpoints" / "finetune.bin"
        save_models(state, finetune_path, phase="finetune")
        artifacts.append(finetune_path)

    write_loss_csv(out_dir / "logs" / "losses.csv", state.history)
    _finish_run(out_dir, "train", config_snapshot, cfg.seed, artifacts, t0)
    return {
        "baseline": baseline_path,
        "finetune": finetune_path,
        "losses": out_dir / "logs" / "losses.csv",
        "state": state,
    }


def run_finetune(cfg: TrainingConfig, w: L.LossWeights, images: np.ndarray,
                 fr, baseline_checkpoint, out_dir) -> dict:
    """Finetune from an existing baseline checkpoint.

    Network configuration comes from the checkpoint header; optimizers
    start fresh.
    """
    if len(images) < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    t0 = time.monotonic()
    _, net_cfg, encoder, decoder, critic = load_models(baseline_checkpoint)
    config_snapshot = _config_snapshot(
        cfg, net_cfg, w, baseline_checkpoint=str(baseline_checkpoint),
        fr_backend=fr.id)
    out_dir = _prepare_run_dir(out_dir, config_snapshot)

    state = init_state(cfg, net_cfg, run_dir=out_dir)
    state.encoder, state.decoder, state.critic = encoder, decoder, critic
    state.opt_critic = torch.optim.Adam(critic.parameters(), lr=cfg.lr_critic,
                                        betas=cfg.adam_betas)
    state.opt_encoder = torch.optim.Adam(encoder.parameters(), lr=cfg.lr_generator,
                                         betas=cfg.adam_betas)
    state.opt_decoder = torch.optim.Adam(decoder.parameters(), lr=cfg.lr_generator,
                                         betas=cfg.adam_betas)

    data_rng = np.random.default_rng(cfg.seed)
    x_all = torch.from_numpy(np.ascontiguousarray(
        images.transpose(0, 3, 1, 2), dtype=np.float32))
    for _ in range(cfg.finetune_epochs):
        for idx in _epoch_batches(len(images), cfg.batch_size, data_rng):
            finetune_step(state, x_all[idx], fr, w)
    finetune_path = out_dir / "checkpoints" / "finetune.bin"
    save_models(state, finetune_path, phase="finetune")
    write_loss_csv(out_dir / "logs" / "losses.csv", state.history)
    _finish_run(out_dir, "finetune", config_snapshot, cfg.seed,
                [out_dir / "config.json", finetune_path,
                 out_dir / "logs" / "losses.csv"], t0)
    return {"finetune": finetune_path, "state": state,
            "losses": out_dir / "logs" / "losses.csv"}
