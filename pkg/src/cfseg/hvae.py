"""Conditional hierarchical VAE acting as the image's causal mechanism.

The hierarchy runs coarse to fine. Every level has a conditional prior
p(z_l | h_l, pa) and posterior q(z_l | h_l, pa, enc(x)); the attribute
vector pa is embedded once and injected at each level and into the decoder
state. Abduction returns the prior-standardized residuals
u_l = (z_l - mu_p) / sigma_p, which stand in for the image's exogenous
noise: decoding the same u under different parents re-applies the
conditional structure and yields the counterfactual, while decoding under
the observed parents reproduces the encoded image exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .synth_scm import AttributeVector

LOGVAR_LO, LOGVAR_HI = -10.0, 4.0
DEFAULT_PARENT_VARS = ("sex", "scanner", "disease", "severity")


@dataclass
class HvaeConfig:
    image_size: int = 64
    level_res: tuple = (8, 16, 32)       # latent resolutions, coarse -> fine
    z_channels: tuple = (16, 8, 4)
    widths: tuple = (64, 48, 32)         # decoder/encoder channels per level
    stem_width: int = 16                 # channels at full image resolution
    emb_dim: int = 16
    parent_vars: tuple = DEFAULT_PARENT_VARS
    beta: float = 1.0
    sigma: float = 0.035                 # Gaussian likelihood scale
    learn_sigma: bool = False
    # training
    epochs: int = 90
    batch_size: int = 64
    lr: float = 1e-3
    grad_clip: float = 200.0
    seed: int = 0

    def __post_init__(self):
        self.level_res = tuple(int(r) for r in self.level_res)
        self.z_channels = tuple(int(c) for c in self.z_channels)
        self.widths = tuple(int(w) for w in self.widths)
        self.parent_vars = tuple(self.parent_vars)
        if len(self.level_res) < 2:
            raise ValueError("hierarchy needs at least 2 latent levels")
        if not (len(self.level_res) == len(self.z_channels) == len(self.widths)):
            raise ValueError("level_res, z_channels and widths must align")
        for a, b in zip(self.level_res, self.level_res[1:]):
            if b != 2 * a:
                raise ValueError("latent resolutions must double level to level")
        if self.image_size != 2 * self.level_res[-1]:
            raise ValueError(
                f"image_size must be twice the finest latent resolution "
                f"({self.image_size} vs {self.level_res[-1]})"
            )
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("level_res", "z_channels", "widths", "parent_vars"):
            d[k] = list(d[k])
        return d


@dataclass
class LatentStack:
    """Prior-standardized latents, coarse to fine; the abducted stand-in for
    the image's exogenous noise."""

    arrays: list  # list of float32 arrays (channels, res, res)

    def __post_init__(self):
        if len(self.arrays) < 2:
            raise ValueError("latent stack needs at least 2 levels")
        for a in self.arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("latent stack contains non-finite values")

    def shapes(self) -> list:
        return [tuple(a.shape) for a in self.arrays]


def parent_vector(attrs, parent_vars=DEFAULT_PARENT_VARS) -> np.ndarray:
    """Attribute values as a float vector; accepts an AttributeVector or
    any mapping with the parent variables as keys."""
    if isinstance(attrs, AttributeVector):
        values = [getattr(attrs, v) for v in parent_vars]
    else:
        values = [attrs[v] for v in parent_vars]
    return np.array(values, dtype=np.float32)


def _norm_groups(ch: int) -> int:
    for g in (8, 4, 2):
        if ch % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.norm = nn.GroupNorm(_norm_groups(ch), ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.act = nn.SiLU()
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv2(self.act(self.conv1(self.norm(x))))
        return x + h


def _stat_head(in_ch, hidden, out_ch):
    head = nn.Sequential(
        nn.Conv2d(in_ch, hidden, 1),
        nn.SiLU(),
        nn.Conv2d(hidden, out_ch, 3, padding=1),
    )
    nn.init.zeros_(head[-1].weight)
    nn.init.zeros_(head[-1].bias)
    return head


class HvaeModel(nn.Module):
    def __init__(self, config: HvaeConfig):
        super().__init__()
        self.config = config
        cfg = config
        n_par = len(cfg.parent_vars)
        emb = cfg.emb_dim
        self.parent_embed = nn.Sequential(
            nn.Linear(n_par, emb), nn.SiLU(), nn.Linear(emb, emb)
        )

        # bottom-up: stem at full res, then strided convs down to the
        # coarsest latent resolution, feature map kept at each level
        self.stem = nn.Conv2d(1, cfg.stem_width, 3, padding=1)
        downs = []
        enc_blocks = []
        prev_w = cfg.stem_width
        for w in reversed(cfg.widths):  # fine -> coarse while going down
            downs.append(nn.Conv2d(prev_w, w, 3, stride=2, padding=1))
            enc_blocks.append(ResBlock(w))
            prev_w = w
        self.downs = nn.ModuleList(downs)
        self.enc_blocks = nn.ModuleList(enc_blocks)

        # top-down
        w0 = cfg.widths[0]
        r0 = cfg.level_res[0]
        self.h0 = nn.Parameter(torch.zeros(1, w0, r0, r0))
        priors, posteriors, z_ins, dec_blocks, ups = [], [], [], [], []
        for i, (w, zc) in enumerate(zip(cfg.widths, cfg.z_channels)):
            hidden = max(2 * zc, w // 2)
            priors.append(_stat_head(w + emb, hidden, 2 * zc))
            posteriors.append(_stat_head(w + emb + w, hidden, 2 * zc))
            z_ins.append(nn.Conv2d(zc + emb, w, 3, padding=1))
            dec_blocks.append(ResBlock(w))
            if i + 1 < len(cfg.widths):
                ups.append(nn.Conv2d(w, cfg.widths[i + 1], 3, padding=1))
        self.priors = nn.ModuleList(priors)
        self.posteriors = nn.ModuleList(posteriors)
        self.z_ins = nn.ModuleList(z_ins)
        self.dec_blocks = nn.ModuleList(dec_blocks)
        self.ups = nn.ModuleList(ups)

        self.out_up = nn.Conv2d(cfg.widths[-1], cfg.stem_width, 3, padding=1)
        self.out_block = ResBlock(cfg.stem_width)
        self.head = nn.Conv2d(cfg.stem_width, 1, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

        if cfg.learn_sigma:
            self.log_sigma = nn.Parameter(torch.tensor(float(np.log(cfg.sigma))))
        else:
            self.register_buffer("log_sigma", torch.tensor(float(np.log(cfg.sigma))))

    # ---------------------------------------------------------------- utils

    def _check_image(self, x):
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(
                f"expected image batch of shape (B,1,{s},{s}), got {tuple(x.shape)}"
            )

    def _pa_maps(self, pa):
        if pa.ndim != 2 or pa.shape[1] != len(self.config.parent_vars):
            raise ValueError(
                f"expected parent batch (B,{len(self.config.parent_vars)}), "
                f"got {tuple(pa.shape)}"
            )
        return self.parent_embed(pa)

    @staticmethod
    def _broadcast(v, res):
        return v[:, :, None, None].expand(v.shape[0], v.shape[1], res, res)

    def bottom_up(self, x):
        feats = {}
        h = self.stem(x)
        res = self.config.image_size
        for down, block in zip(self.downs, self.enc_blocks):
            h = block(down(h))
            res //= 2
            feats[res] = h
        return feats

    def _up(self, h, i):
        h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
        return self.ups[i](h)

    def _decode_head(self, h):
        h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
        h = self.out_block(self.out_up(h))
        return torch.sigmoid(self.head(h))

    # ------------------------------------------------------------- training

    def forward(self, x, pa, eps=None, sample=True):
        """Posterior pass. Returns (x_mean, recon_nll per sample, kl list
        per level per sample). eps optionally fixes the reparameterization
        noise (needed for finite-difference checks)."""
        self._check_image(x)
        cfg = self.config
        feats = self.bottom_up(x)
        pe = self._pa_maps(pa)
        h = self.h0.expand(x.shape[0], -1, -1, -1).to(x.dtype)
        kls = []
        for i, (res, zc) in enumerate(zip(cfg.level_res, cfg.z_channels)):
            pe_map = self._broadcast(pe, res)
            mu_p, logv_p = self.priors[i](torch.cat([h, pe_map], dim=1)).chunk(2, dim=1)
            mu_q, logv_q = self.posteriors[i](
                torch.cat([h, pe_map, feats[res]], dim=1)
            ).chunk(2, dim=1)
            logv_p = logv_p.clamp(LOGVAR_LO, LOGVAR_HI)
            logv_q = logv_q.clamp(LOGVAR_LO, LOGVAR_HI)
            if sample:
                e = eps[i] if eps is not None else torch.randn_like(mu_q)
                z = mu_q + torch.exp(0.5 * logv_q) * e
            else:
                z = mu_q
            kl = 0.5 * (
                torch.exp(logv_q - logv_p)
                + (mu_q - mu_p) ** 2 / torch.exp(logv_p)
                - 1.0
                + logv_p
                - logv_q
            )
            kls.append(kl.flatten(1).sum(dim=1))
            h = self.dec_blocks[i](h + self.z_ins[i](torch.cat([z, pe_map], dim=1)))
            if i + 1 < len(cfg.level_res):
                h = self._up(h, i)
        x_mean = self._decode_head(h)
        sigma = torch.exp(self.log_sigma)
        recon_nll = (
            ((x - x_mean) ** 2 / (2.0 * sigma**2) + self.log_sigma)
            .flatten(1)
            .sum(dim=1)
        ) + 0.5 * float(np.log(2.0 * np.pi)) * x[0].numel()
        return x_mean, recon_nll, kls

    def elbo(self, x, pa, eps=None, sample=True):
        """Per-sample evidence lower bound (nats); higher is better."""
        _, recon_nll, kls = self.forward(x, pa, eps=eps, sample=sample)
        return -(recon_nll + torch.stack(kls, dim=0).sum(dim=0))

    def loss(self, x, pa, eps=None):
        x_mean, recon_nll, kls = self.forward(x, pa, eps=eps, sample=True)
        kl = torch.stack(kls, dim=0).sum(dim=0)
        loss = (recon_nll + self.config.beta * kl).mean()
        parts = {
            "recon_nll": float(recon_nll.mean().detach()),
            "kl_per_level": [float(k.mean().detach()) for k in kls],
            "elbo": float((-(recon_nll + kl)).mean().detach()),
        }
        return loss, parts

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def encode_u(self, x, pa):
        """Abduction: posterior means standardized by the conditional prior."""
        self._check_image(x)
        cfg = self.config
        feats = self.bottom_up(x)
        pe = self._pa_maps(pa)
        h = self.h0.expand(x.shape[0], -1, -1, -1).to(x.dtype)
        us = []
        for i, res in enumerate(cfg.level_res):
            pe_map = self._broadcast(pe, res)
            mu_p, logv_p = self.priors[i](torch.cat([h, pe_map], dim=1)).chunk(2, dim=1)
            mu_q, _ = self.posteriors[i](
                torch.cat([h, pe_map, feats[res]], dim=1)
            ).chunk(2, dim=1)
            logv_p = logv_p.clamp(LOGVAR_LO, LOGVAR_HI)
            z = mu_q
            us.append((z - mu_p) * torch.exp(-0.5 * logv_p))
            h = self.dec_blocks[i](h + self.z_ins[i](torch.cat([z, pe_map], dim=1)))
            if i + 1 < len(cfg.level_res):
                h = self._up(h, i)
        return us

    @torch.no_grad()
    def decode_u(self, us, pa):
        """Prediction: re-apply standardized latents under (possibly new)
        parents, level by level through the conditional priors."""
        cfg = self.config
        if len(us) != len(cfg.level_res):
            raise ValueError(
                f"latent stack has {len(us)} levels, model expects {len(cfg.level_res)}"
            )
        pe = self._pa_maps(pa)
        h = self.h0.expand(pa.shape[0], -1, -1, -1).to(pe.dtype)
        for i, (res, zc) in enumerate(zip(cfg.level_res, cfg.z_channels)):
            u = us[i]
            if tuple(u.shape[1:]) != (zc, res, res):
                raise ValueError(
                    f"level {i} latent shape {tuple(u.shape[1:])} does not match "
                    f"model hierarchy ({zc},{res},{res})"
                )
            pe_map = self._broadcast(pe, res)
            mu_p, logv_p = self.priors[i](torch.cat([h, pe_map], dim=1)).chunk(2, dim=1)
            logv_p = logv_p.clamp(LOGVAR_LO, LOGVAR_HI)
            z = mu_p + torch.exp(0.5 * logv_p) * u
            h = self.dec_blocks[i](h + self.z_ins[i](torch.cat([z, pe_map], dim=1)))
            if i + 1 < len(cfg.level_res):
                h = self._up(h, i)
        return self._decode_head(h)


# ---------------------------------------------------------------------------
# single-image numpy API
# ---------------------------------------------------------------------------


def _to_batch(model: HvaeModel, image: np.ndarray) -> torch.Tensor:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    return torch.from_numpy(img)[None, None]


def encode(model: HvaeModel, image: np.ndarray, parents: AttributeVector) -> LatentStack:
    model.eval()
    pa = torch.from_numpy(parent_vector(parents, model.config.parent_vars))[None]
    us = model.encode_u(_to_batch(model, image), pa)
    return LatentStack([u[0].numpy().astype(np.float32) for u in us])


def decode(model: HvaeModel, latents: LatentStack, parents: AttributeVector) -> np.ndarray:
    model.eval()
    pa = torch.from_numpy(parent_vector(parents, model.config.parent_vars))[None]
    us = [torch.from_numpy(a)[None] for a in latents.arrays]
    out = model.decode_u(us, pa)
    return np.clip(out[0, 0].numpy(), 0.0, 1.0).astype(np.float32)


def reconstruct(model: HvaeModel, image: np.ndarray, parents: AttributeVector) -> np.ndarray:
    return decode(model, encode(model, image, parents), parents)
