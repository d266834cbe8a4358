"""
Encoder, decoder and refine networks.

    Encoder   per-frame embedding -> single-head self-attention -> GRU scan
              -> projection to V' latent rows of size l_dim
    Decoder   initial state h0 = FC(flatten(Z)), latent ODE over the frame
              times, per-frame readout conditioned on Z_x
    Refine    mean of the observed latent rows -> anchor logits, offsets and
              diagonal log-variances

Parameters live in flat dicts under the prefixes "enc.", "dec." and "refine.".
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import tensor as T
from src.autodiff.tensor import Node
from src.errors import ShapeError
from src.models.anchors import AnchorFC
from src.models.layers import GRUCell, Linear, SelfAttention, as_nodes
from src.models.ode import DynamicsNet, SolverConfig, latent_trajectory

logger = logging.getLogger(__name__)

LOG_VAR_BOUND = 8.0


@dataclass
class ModelConfig:
    """
    Network sizes. ``latent_dim`` is both the latent row size l_dim and the ODE state size.

    The full-scale setting is a 512-entry codebook of 512-dimensional
    codewords; the defaults here are desk-scale.
    """

    d_model: int = 64
    latent_rows: int = 8
    latent_dim: int = 32
    codebook_size: int = 64
    dynamics_hidden: int = 64
    beta: float = 0.25
    refine_hidden: int = 64
    init_log_var: float = -2.0

    def validate(self) -> None:
        for name in ("d_model", "latent_rows", "latent_dim", "codebook_size", "dynamics_hidden", "refine_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.beta < 0:
            raise ValueError(f"model.beta must be >= 0, got {self.beta}")


def _flatten_frames(x: Node) -> Node:
    """(B, F, V, C) -> (B, F, V*C)."""
    shape = x.shape
    return T.reshape(x, shape[:2] + (int(np.prod(shape[2:])),))


class Encoder:
    """Sequence -> (B, V', l_dim) latent rows."""

    def __init__(self, input_dim: int, config: ModelConfig, prefix: str = "enc"):
        self.prefix = prefix
        self.input_dim = input_dim
        self.config = config
        self.embed = Linear(f"{prefix}.embed", input_dim, config.d_model)
        self.attention = SelfAttention(f"{prefix}.attn", config.d_model)
        self.gru = GRUCell(f"{prefix}.gru", config.d_model, config.d_model)
        self.project = Linear(f"{prefix}.out", config.d_model, config.latent_rows * config.latent_dim)

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        for part in (self.embed, self.attention, self.gru, self.project):
            params.update(part.init(rng))
        return params

    def __call__(self, p: Mapping[str, Node], seq) -> Node:
        x = seq if isinstance(seq, Node) else T.constant(seq)
        if x.ndim == 4:
            x = _flatten_frames(x)
        if x.ndim != 3 or x.shape[-1] != self.input_dim:
            raise ShapeError(f"encoder expects (B, frames, {self.input_dim}) input, got {x.shape}")
        e = self.attention(p, self.embed(p, x))
        h = self.gru.scan(p, e)
        z = self.project(p, h)
        return T.reshape(z, (x.shape[0], self.config.latent_rows, self.config.latent_dim))


class Decoder:
    """Quantised latent rows + condition -> (B, H, V, C) frames through the latent ODE."""

    def __init__(self, joints: int, coords: int, horizon: int, config: ModelConfig, prefix: str = "dec"):
        self.prefix = prefix
        self.joints = joints
        self.coords = coords
        self.horizon = horizon
        self.config = config
        flat = config.latent_rows * config.latent_dim
        self.initial = Linear(f"{prefix}.init", flat, config.latent_dim)
        self.dynamics = DynamicsNet(f"{prefix}.ode", config.latent_dim, config.dynamics_hidden)
        self.condition = Linear(f"{prefix}.cond", flat, config.d_model, bias=False)
        self.hidden = Linear(f"{prefix}.readout_hidden", config.latent_dim, config.d_model)
        self.readout = Linear(f"{prefix}.readout", config.d_model, joints * coords,
                              init_scale=0.1 / np.sqrt(config.d_model))

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        for part in (self.initial, self.dynamics, self.condition, self.hidden, self.readout):
            params.update(part.init(rng))
        return params

    def initial_state(self, p: Mapping[str, Node], z_q) -> Node:
        """h0 = FC(flatten(Z)) for (B, V', l_dim) rows."""
        z_q = z_q if isinstance(z_q, Node) else T.constant(z_q)
        return self.initial(p, T.reshape(z_q, (z_q.shape[0], -1)))

    def trajectory(self, p: Mapping[str, Node], h0: Node, frame_times: Sequence[float],
                   solver: SolverConfig) -> Node:
        """(B, H, latent_dim) latent states at the frame times."""
        return latent_trajectory(self.dynamics.bind(p), h0, frame_times, solver)

    def __call__(self, p: Mapping[str, Node], h_traj, z_x) -> Node:
        """Per-frame readout of a latent trajectory, conditioned on Z_x."""
        h_traj = h_traj if isinstance(h_traj, Node) else T.constant(h_traj)
        z_x = z_x if isinstance(z_x, Node) else T.constant(z_x)
        if h_traj.ndim != 3 or h_traj.shape[1] != self.horizon:
            raise ShapeError(f"decoder expects (B, {self.horizon}, latent_dim) states, got {h_traj.shape}")
        batch, horizon, _ = h_traj.shape
        cond = self.condition(p, T.reshape(z_x, (z_x.shape[0], -1)))
        if cond.shape[0] != batch:
            raise ShapeError(f"condition batch {cond.shape[0]} does not match trajectory batch {batch}")
        cond = T.broadcast_to(T.reshape(cond, (batch, 1, cond.shape[-1])), (batch, horizon, cond.shape[-1]))
        hidden = T.tanh(self.hidden(p, h_traj) + cond)
        frames = self.readout(p, hidden)
        return T.reshape(frames, (batch, horizon, self.joints, self.coords))

    def predict(self, p: Mapping[str, Node], z_q, z_x, frame_times: Sequence[float],
                solver: SolverConfig, h0: Optional[Node] = None) -> Node:
        """Initial state -> ODE trajectory -> frames. ``h0`` overrides the projection of ``z_q``."""
        if h0 is None:
            h0 = self.initial_state(p, z_q)
        return self(p, self.trajectory(p, h0, frame_times, solver), z_x)


class RefineModule:
    """Observed latent rows -> (logits (B, N), offsets (B, N, d), log-variances (B, N, d))."""

    def __init__(self, anchor_count: int, config: ModelConfig, prefix: str = "refine"):
        self.prefix = prefix
        self.anchor_count = anchor_count
        self.config = config
        d, hid = config.latent_dim, config.refine_hidden
        self.trunk = Linear(f"{prefix}.trunk", d, hid)
        self.score = Linear(f"{prefix}.score", hid, anchor_count)
        self.offset = Linear(f"{prefix}.offset", hid, anchor_count * d, init_scale=0.01)
        self.log_var = Linear(f"{prefix}.log_var", hid, anchor_count * d, init_scale=0.01)

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        for part in (self.trunk, self.score, self.offset, self.log_var):
            params.update(part.init(rng))
        params[self.log_var.bias_key] = np.full(self.anchor_count * self.config.latent_dim,
                                                self.config.init_log_var)
        return params

    def __call__(self, p: Mapping[str, Node], z_obs) -> Tuple[Node, Node, Node]:
        z_obs = z_obs if isinstance(z_obs, Node) else T.constant(z_obs)
        batch, d = z_obs.shape[0], self.config.latent_dim
        summary = z_obs.mean(axis=1)
        hidden = T.tanh(self.trunk(p, summary))
        logits = self.score(p, hidden)
        offsets = T.reshape(self.offset(p, hidden), (batch, self.anchor_count, d))
        raw = T.reshape(self.log_var(p, hidden), (batch, self.anchor_count, d))
        log_var = LOG_VAR_BOUND * T.tanh(raw * (1.0 / LOG_VAR_BOUND))
        return logits, offsets, log_var


def encode(seq: np.ndarray, params: Mapping[str, np.ndarray], encoder: Encoder) -> np.ndarray:
    """Latent rows for a single (frames, V, C) sequence, or a (B, frames, V, C) batch."""
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 3
    z = encoder(as_nodes(params), seq[None] if single else seq).value
    return z[0] if single else z


def decode(h_traj: np.ndarray, z_x: np.ndarray, params: Mapping[str, np.ndarray], decoder: Decoder) -> np.ndarray:
    """Frames for a (H, latent_dim) trajectory or a (B, H, latent_dim) batch."""
    h_traj = np.asarray(h_traj, dtype=np.float64)
    single = h_traj.ndim == 2
    if single:
        h_traj, z_x = h_traj[None], np.asarray(z_x)[None]
    out = decoder(as_nodes(params), h_traj, z_x).value
    return out[0] if single else out


def refine(z_obs: np.ndarray, anchors, params: Mapping[str, np.ndarray],
           module: RefineModule) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Logits, offsets and diagonal covariances for one (V', l_dim) input.

    Raises:
        ValueError: the anchor count differs from the module's
    """
    if anchors.size != module.anchor_count:
        raise ValueError(f"refine module has {module.anchor_count} outputs, anchor set has {anchors.size}")
    z_obs = np.asarray(z_obs, dtype=np.float64)
    single = z_obs.ndim == 2
    logits, offsets, log_var = module(as_nodes(params), z_obs[None] if single else z_obs)
    out = (logits.value, offsets.value, np.exp(log_var.value))
    return tuple(o[0] for o in out) if single else out


@dataclass
class Networks:
    """The modules of one pipeline, built to matching shapes."""

    encoder: Encoder
    decoder: Decoder
    refine: Optional[RefineModule] = None
    fc: Optional[AnchorFC] = None

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = self.encoder.init(rng)
        params.update(self.decoder.init(rng))
        for part in (self.refine, self.fc):
            if part is not None:
                params.update(part.init(rng))
        return params


def build_networks(joints: int, coords: int, horizon: int, config: ModelConfig,
                   anchor_count: Optional[int] = None) -> Networks:
    """Encoder and decoder, plus the refine head and anchor FC when ``anchor_count`` is given."""
    config.validate()
    networks = Networks(
        encoder=Encoder(joints * coords, config),
        decoder=Decoder(joints, coords, horizon, config),
    )
    if anchor_count is not None:
        networks.refine = RefineModule(anchor_count, config)
        networks.fc = AnchorFC(config.latent_dim)
    return networks
