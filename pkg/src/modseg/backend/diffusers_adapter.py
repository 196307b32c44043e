"""Stable Diffusion backend built on ``diffusers``.

Imported lazily: the package works without torch or diffusers, and this module
is only loaded when a real checkpoint is requested.

Inversion is the edit-friendly DDPM kind: every scheduled latent is drawn
independently from the clean latent and the per-step noise that links
consecutive latents is solved for, so an unmodulated denoise retraces the
recorded trajectory. Modulated runs push a batch of two through the UNet, the
unmodulated replay and the modulated path, which lets the replay's
cross-attention maps be injected into the modulated path on the fly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UnsupportedSiteError, ValidationError
from . import ddpm
from .base import (BlockPath, CrossAttentionSite, LatentTrajectory, ModulationSpec, Placement, TimestepSchedule,
                   check_image, resolve_timestep)

LATENT_FACTOR = 8
# Block index per path and nominal token-grid side at 512 x 512.
_UP = {16: 1, 32: 2, 64: 3}
_DOWN = {64: 0, 32: 1, 16: 2}

SITES = tuple(CrossAttentionSite(BlockPath.UPWARD, r, i) for r in (16, 32, 64) for i in (1, 2, 3)) + \
    tuple(CrossAttentionSite(BlockPath.DOWNWARD, r, i) for r in (64, 32, 16) for i in (1, 2))


def _import_torch():
    try:
        import torch
        import diffusers
    except ImportError as exc:
        raise ImportError("the diffusers backend needs `pip install torch diffusers transformers`") from exc
    return torch, diffusers


def processor_name(site: CrossAttentionSite) -> str:
    if site.path is BlockPath.UPWARD:
        block = f"up_blocks.{_UP[site.resolution]}"
    else:
        block = f"down_blocks.{_DOWN[site.resolution]}"
    return f"{block}.attentions.{site.layer_index - 1}.transformer_blocks.0.attn2.processor"


@dataclass(eq=False)
class DiffusersTrajectory(LatentTrajectory):
    latents: dict = field(default_factory=dict)  # t -> latent tensor, t = 0 is the clean latent
    noise: dict = field(default_factory=dict)  # t -> z_t
    text: object = None


class _State:
    """Per-call switches read by every cross-attention processor."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.capture = None  # processor name whose query is recorded
        self.query = None
        self.inject = False
        self.target = None  # processor name receiving the offset
        self.offset = 0.0
        self.mask = None  # (1, tokens, 1) tensor
        self.placement = Placement.POST_PROJECTION


class _CrossAttention:
    def __init__(self, name: str, state: _State, torch):
        self.name, self.state, self.torch = name, state, torch

    def __call__(self, attn, hidden_states, encoder_hidden_states=None, attention_mask=None, **_):
        st, torch = self.state, self.torch
        context = hidden_states if encoder_hidden_states is None else encoder_hidden_states
        query = attn.to_q(hidden_states)
        if st.capture == self.name:
            st.query = query.detach()
        q = attn.head_to_batch_dim(query)
        k = attn.head_to_batch_dim(attn.to_k(context))
        v = attn.head_to_batch_dim(attn.to_v(context))
        probs = attn.get_attention_scores(q, k, attention_mask)
        if st.inject:
            # Batch item 0 is the unmodulated replay; its maps drive item 1.
            heads = attn.heads
            probs = torch.cat([probs[:heads], probs[:heads]], 0)
        out = attn.batch_to_head_dim(torch.bmm(probs, v))
        hit = st.target == self.name and st.offset != 0.0
        if hit and st.placement is Placement.PRE_PROJECTION:
            out = self._shift(out)
        out = attn.to_out[1](attn.to_out[0](out))
        if hit and st.placement is Placement.POST_PROJECTION:
            out = self._shift(out)
        return out

    def _shift(self, out):
        # Only the modulated path (last batch item) is offset.
        delta = self.torch.zeros_like(out)
        delta[-1:] = self.state.offset * self.state.mask.to(out.dtype)
        return out + delta


class DiffusersBackend:
    name = "diffusers"
    sites = SITES

    def __init__(self, checkpoint: str, prompt: str = "", device: str | None = None, dtype: str = "float32"):
        torch, diffusers = _import_torch()
        self.torch = torch
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.dtype = getattr(torch, dtype)
        pipe = diffusers.StableDiffusionPipeline.from_pretrained(checkpoint, torch_dtype=self.dtype,
                                                                 safety_checker=None)
        pipe = pipe.to(self.device)
        self.unet, self.vae = pipe.unet.eval(), pipe.vae.eval()
        self.tokenizer, self.text_encoder = pipe.tokenizer, pipe.text_encoder.eval()
        self.prompt = prompt
        self.abar = ddpm.alphas_cumprod(pipe.scheduler.config.num_train_timesteps,
                                        pipe.scheduler.config.beta_start, pipe.scheduler.config.beta_end)
        self.state = _State()
        procs = dict(self.unet.attn_processors)
        for key in procs:
            if key.endswith("attn2.processor"):
                procs[key] = _CrossAttention(key, self.state, torch)
        self.unet.set_attn_processor(procs)

    # -- helpers ----------------------------------------------------------------

    def _check_site(self, site: CrossAttentionSite) -> None:
        if site not in self.sites:
            raise UnsupportedSiteError(f"site {site} is not exposed by the diffusers backend")

    def _encode_text(self, prompt: str):
        ids = self.tokenizer(prompt, padding="max_length", max_length=self.tokenizer.model_max_length,
                             truncation=True, return_tensors="pt").input_ids.to(self.device)
        return self.text_encoder(ids)[0]

    def _tensor(self, array: np.ndarray):
        return self.torch.from_numpy(np.ascontiguousarray(array)).to(self.device, self.dtype)

    def _eps(self, latents, t: int, text):
        # Training timesteps are 0-based; ours count from 1.
        return self.unet(latents, t - 1, encoder_hidden_states=text.expand(len(latents), -1, -1)).sample

    def _step(self, x, eps, t: int, prev: int, z):
        a = self.abar[t]
        x0 = (x - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
        cx0, cxt, sigma = ddpm.posterior_coefficients(a, self.abar[prev])
        return cx0 * x0 + cxt * x + sigma * z

    def _decode(self, latent) -> np.ndarray:
        image = self.vae.decode(latent / self.vae.config.scaling_factor).sample
        return ((image[0].permute(1, 2, 0).float().cpu().numpy() + 1.0) / 2.0).clip(0.0, 1.0).astype(np.float64)

    def _grid(self, traj: LatentTrajectory, site: CrossAttentionSite) -> tuple[int, int]:
        scale = 512 // site.resolution
        return traj.image_shape[0] // scale, traj.image_shape[1] // scale

    # -- contract ---------------------------------------------------------------

    def invert(self, image: np.ndarray, schedule: TimestepSchedule | None = None,
               seed: int = 0) -> DiffusersTrajectory:
        image = check_image(image)
        schedule = schedule or TimestepSchedule()
        if schedule.max_timestep + 1 != len(self.abar):
            raise ValidationError("schedule T does not match the checkpoint noise schedule")
        torch = self.torch
        H, W = image.shape[:2]
        traj = DiffusersTrajectory(schedule=schedule, seed=seed, image_shape=(H, W), grid_shape=(H // 32, W // 32),
                                   prompt=self.prompt)
        with torch.no_grad():
            pixels = self._tensor(image.transpose(2, 0, 1)[None] * 2.0 - 1.0)
            x0 = self.vae.encode(pixels).latent_dist.mean * self.vae.config.scaling_factor
            traj.text = self._encode_text(self.prompt)
            traj.latents[0] = x0
            for t in schedule.step_timesteps:
                eps = np.random.default_rng([seed, t]).standard_normal(tuple(x0.shape))
                a = self.abar[t]
                traj.latents[t] = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * self._tensor(eps)
            for t in schedule.step_timesteps:
                prev = schedule.previous(t)
                x_t = traj.latents[t]
                mean = self._step(x_t, self._eps(x_t, t, traj.text), t, prev, 0.0)
                _, _, sigma = ddpm.posterior_coefficients(self.abar[t], self.abar[prev])
                traj.noise[t] = (traj.latents[prev] - mean) / sigma if sigma > 0 else torch.zeros_like(x_t)
        return traj

    def extract_features(self, traj: DiffusersTrajectory, site: CrossAttentionSite, timestep: int) -> np.ndarray:
        self._check_site(site)
        t = resolve_timestep(traj.schedule, timestep)
        self.state.reset()
        self.state.capture = processor_name(site)
        try:
            with self.torch.no_grad():
                self._eps(traj.latents[t], t, traj.text)
            query = self.state.query
        finally:
            self.state.reset()
        h, w = self._grid(traj, site)
        return query[0].float().cpu().numpy().reshape(h, w, -1).astype(np.float64)

    def reconstruct(self, traj: DiffusersTrajectory) -> np.ndarray:
        schedule = traj.schedule
        x = traj.latents[schedule.step_timesteps[-1]]
        self.state.reset()
        with self.torch.no_grad():
            for t in schedule.descending_from(schedule.step_timesteps[-1]):
                x = self._step(x, self._eps(x, t, traj.text), t, schedule.previous(t), traj.noise[t])
            return self._decode(x)

    def modulated_denoise(self, traj: DiffusersTrajectory, spec: ModulationSpec) -> np.ndarray:
        self._check_site(spec.site)
        if spec.mask.shape != traj.grid_shape:
            raise ValidationError(f"mask shape {spec.mask.shape} does not match feature grid {traj.grid_shape}")
        torch, st = self.torch, self.state
        schedule = traj.schedule
        steps = schedule.descending_from(resolve_timestep(schedule, spec.timestep))
        h, w = self._grid(traj, spec.site)
        mask = torch.nn.functional.interpolate(self._tensor(spec.mask[None, None].astype(np.float32)),
                                               size=(h, w), mode="nearest")
        st.reset()
        st.target, st.placement, st.inject = processor_name(spec.site), spec.placement, spec.inject_attention
        st.mask = mask.reshape(1, h * w, 1)
        try:
            with torch.no_grad():
                x = traj.latents[steps[0]].repeat(2, 1, 1, 1)
                for i, t in enumerate(steps):
                    st.offset = spec.offset if spec.every_step or i == 0 else 0.0
                    x = self._step(x, self._eps(x, t, traj.text), t, schedule.previous(t), traj.noise[t])
                return self._decode(x[1:])
        finally:
            st.reset()
