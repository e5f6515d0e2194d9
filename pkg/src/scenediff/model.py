"""Full generator: encoder + diffusion latent + decoder sharing one parameter store."""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import (DecoderConfig, bundle_from_deltas, decode_deltas, ground_truth_bundle,
                      ground_truth_deltas, init_decoder_params, integrate_trajectory)
from .diffusion import (DiffusionConfig, dit_denoiser, forward_noise, init_dit_params, make_schedule,
                        predict_x0, sample_action_latent)
from .encoder import EncoderConfig, embed_history, encode_scene, init_encoder_params
from .errors import ConfigError, DataError
from .tensor import ParameterStore, linear_from


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    horizon_history: int = 11

    def validate(self):
        self.encoder.validate()
        self.decoder.validate()
        self.diffusion.validate()
        if self.horizon_history < 2:
            raise ConfigError("horizon_history must be >= 2")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            encoder=EncoderConfig(**d.get("encoder", {})),
            decoder=DecoderConfig(**d.get("decoder", {})),
            diffusion=DiffusionConfig(**d.get("diffusion", {})),
            horizon_history=d.get("horizon_history", 11),
        )


@dataclass
class ForwardOutput:
    positions: T.Tensor  # [A_p, T_f, 2]
    diffusion: T.Tensor  # scalar MSE
    latent: T.Tensor  # latent fed to the encoder


class SceneModel:
    """Trainable generator.

    Training feeds the encoder a denoised estimate of a learned target latent;
    sampling replaces it with a latent drawn by reverse diffusion.
    """

    kind = "scene_model"

    def __init__(self, cfg, seed=0, zero_gates=True):
        self.cfg = cfg.validate()
        self.schedule = make_schedule(cfg.diffusion.T_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)
        self.params = ParameterStore(seed)
        d_latent = cfg.diffusion.d_latent
        init_encoder_params(self.params, cfg.encoder, d_latent, cfg.horizon_history - 1)
        init_dit_params(self.params, cfg.diffusion, cfg.encoder.d_model, zero_gates=zero_gates)
        init_decoder_params(self.params, cfg.decoder, cfg.encoder.d_model)
        # clean diffusion target: projection of the mean future displacement
        self.params.linear("target.proj", 2, d_latent)

    def _check(self, inputs):
        if inputs.horizon_future != self.cfg.decoder.T_f:
            raise DataError(f"scene {inputs.scene_id}: T_f {inputs.horizon_future} != model T_f {self.cfg.decoder.T_f}")
        if inputs.motion.shape[1] != self.cfg.horizon_history - 1:
            raise DataError(f"scene {inputs.scene_id}: T_h {inputs.motion.shape[1] + 1} != model T_h {self.cfg.horizon_history}")
        if inputs.n_predicted == 0:
            raise DataError(f"scene {inputs.scene_id} has no predicted agents")

    def history(self, inputs):
        return embed_history(inputs.motion, self.params, self.cfg.encoder.heads)

    def target_latent(self, inputs):
        mean_delta = ground_truth_deltas(inputs).mean(axis=1)
        return linear_from(self.params, "target.proj", mean_delta)

    def denoise(self, x_t, t, context):
        return dit_denoiser(x_t, t, context, self.params, self.cfg.diffusion)

    def forward_train(self, inputs, t, eps):
        """Differentiable pass used for the training objective."""
        self._check(inputs)
        hist = self.history(inputs)
        ctx = T.getitem(hist, inputs.predicted_index)
        x0 = self.target_latent(inputs)
        x_t = forward_noise(x0, t, eps, self.schedule)
        eps_hat = self.denoise(x_t, t, ctx)
        diff = eps_hat - eps
        l_diff = T.mean(diff * diff)
        latent = predict_x0(x_t, eps_hat, t, self.schedule)
        positions = self.rollout(inputs, latent, hist)
        return ForwardOutput(positions=positions, diffusion=l_diff, latent=latent)

    def rollout(self, inputs, latent, hist=None):
        enc = encode_scene(inputs, latent, self.cfg.encoder, self.params, history=hist)
        deltas = decode_deltas(enc.fused, self.cfg.decoder, self.params)
        return integrate_trajectory(inputs.current_pos[inputs.predicted_index], deltas)

    def sample_latent(self, inputs, seed):
        self._check(inputs)
        with T.no_grad():
            ctx = T.getitem(self.history(inputs), inputs.predicted_index)
        return sample_action_latent(ctx, self.params, self.schedule, self.cfg.diffusion, seed)

    def sample(self, inputs, seed):
        """One generated future for every predicted agent."""
        latent = self.sample_latent(inputs, seed)
        with T.no_grad():
            hist = self.history(inputs)
            enc = encode_scene(inputs, latent, self.cfg.encoder, self.params, history=hist)
            deltas = decode_deltas(enc.fused, self.cfg.decoder, self.params).data
        return bundle_from_deltas(deltas, inputs, sample_seed=seed)

    def save(self, path):
        T.save_checkpoint(path, self.params, model_kind=self.kind, model_config=self.cfg.to_dict())


class GroundTruthModel:
    """Stub generator that replays each scene's ground-truth future."""

    kind = "ground_truth_stub"

    def sample(self, inputs, seed):
        b = ground_truth_bundle(inputs)
        b.sample_seed = seed
        return b

    def save(self, path):
        T.save_checkpoint(path, ParameterStore(), model_kind=self.kind)


def load_model(path):
    state, meta = T.load_checkpoint(path)
    kind = meta.get("model_kind", SceneModel.kind)
    if kind == GroundTruthModel.kind:
        return GroundTruthModel()
    if kind != SceneModel.kind:
        raise DataError(f"{path}: unknown model_kind {kind!r}")
    if "model_config" not in meta:
        raise DataError(f"{path}: checkpoint has no model_config")
    model = SceneModel(ModelConfig.from_dict(meta["model_config"]))
    model.params.load_state_dict(state)
    return model


def derive_seed(*parts):
    """Stable 63-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
