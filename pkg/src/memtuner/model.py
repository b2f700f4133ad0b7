"""Causal decision transformer over interleaved observation/action tokens.

Observations and actions are embedded separately, interleaved as
(o_1, a_1, ..., o_T, a_T), summed with sinusoidal positional encodings, and
run through post-norm decoder layers with causal multi-head self-attention.
Action logits are read at the observation-token positions (token 2t-2
predicts a_t). The scaled pre-softmax attention logits of a configurable
layer/head subset are exposed for attention supervision, and the full
softmax attention maps can be retained for heatmap export.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GRID_CHANNELS = 20  # 11 object ids + 6 color ids + 3 state ids, one-hot planes
CHECKPOINT_MAGIC = b"MEMTCKPT"
CHECKPOINT_VERSION = 1

LAYER_CHOICES = ("first", "middle", "last")
HEAD_CHOICES = ("single", "all")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    dropout: float = 0.1
    embedder: str = "grid20"  # grid20 (7x7x3 symbolic) or pixel3 (3x84x84)
    n_actions: int = 7
    max_seq_len: int = 256
    placement_layer: str = "first"
    placement_heads: str = "single"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.embedder not in ("grid20", "pixel3"):
            raise ValueError(f"unknown embedder {self.embedder!r}")
        if self.placement_layer not in LAYER_CHOICES:
            raise ValueError(f"placement_layer must be one of {LAYER_CHOICES}")
        if self.placement_heads not in HEAD_CHOICES:
            raise ValueError(f"placement_heads must be one of {HEAD_CHOICES}")

    @property
    def ff_width(self) -> int:
        return 4 * self.d_model

    @property
    def supervised_layer(self) -> int:
        return {"first": 0, "middle": self.n_layers // 2, "last": self.n_layers - 1}[self.placement_layer]

    @property
    def supervised_heads(self) -> list[int]:
        return [0] if self.placement_heads == "single" else list(range(self.n_heads))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TransformerOutput:
    action_logits: Tensor          # (B, T, n_actions) at observation tokens
    supervised_logits: Tensor      # (B, K, S, S) scaled pre-softmax logits of supervised heads
    attentions: list[np.ndarray] = field(default_factory=list)  # per layer (B, H, S, S) softmax maps
    n_tokens: int = 0


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def one_hot_grid(obs: np.ndarray) -> np.ndarray:
    """(..., 7, 7, 3) integer grids to (..., 20, 7, 7) one-hot planes."""
    obs = np.asarray(obs)
    lead = obs.shape[:-3]
    flat = obs.reshape((-1, 7, 7, 3))
    n = flat.shape[0]
    planes = np.zeros((n, GRID_CHANNELS, 7, 7))
    rows = np.arange(n)[:, None, None]
    yy = np.arange(7)[None, :, None]
    xx = np.arange(7)[None, None, :]
    planes[rows, flat[..., 0], yy, xx] = 1.0
    planes[rows, 11 + flat[..., 1], yy, xx] = 1.0
    planes[rows, 17 + flat[..., 2], yy, xx] = 1.0
    return planes.reshape(lead + (GRID_CHANNELS, 7, 7))


def _grid_patch_index() -> tuple[np.ndarray, np.ndarray]:
    """Static scatter pattern for 3x3 pad-1 convolution over a 7x7 grid.

    For every output pixel and in-bounds kernel offset, gives the source
    pixel (flattened 0..48) and the patch slot (kernel position 0..8).
    """
    pixels, slots, targets = [], [], []
    for i in range(7):
        for j in range(7):
            for ki in range(3):
                for kj in range(3):
                    si, sj = i + ki - 1, j + kj - 1
                    if 0 <= si < 7 and 0 <= sj < 7:
                        targets.append(i * 7 + j)
                        pixels.append(si * 7 + sj)
                        slots.append(ki * 3 + kj)
    return (
        np.array(targets, dtype=np.intp),
        np.array(pixels, dtype=np.intp),
        np.array(slots, dtype=np.intp),
    )


_PATCH_TARGET, _PATCH_PIXEL, _PATCH_SLOT = _grid_patch_index()


def grid_conv_columns(obs: np.ndarray) -> np.ndarray:
    """im2col of the one-hot expansion of (N, 7, 7, 3) grids, without
    materializing the planes: each patch column holds exactly three ones.

    Layout matches conv kernel flattening (channel * 9 + kernel slot), so
    cols @ W.reshape(40, 180).T equals conv2d(one_hot(obs), W, pad=1).
    """
    flat = np.asarray(obs).reshape(-1, 49, 3).astype(np.intp)
    n = flat.shape[0]
    width = GRID_CHANNELS * 9
    cols = np.zeros((n, 49, width))
    gathered = flat[:, _PATCH_PIXEL, :]  # (n, k, 3) channel ids per scatter entry
    gathered = (gathered + np.array([0, 11, 17])) * 9 + _PATCH_SLOT[None, :, None]
    rows = np.broadcast_to(np.arange(n)[:, None, None], gathered.shape)
    targets = np.broadcast_to(_PATCH_TARGET[None, :, None], gathered.shape)
    cols[rows.ravel(), targets.ravel(), gathered.ravel()] = 1.0
    return cols.reshape(n * 49, width)


class Transformer:
    """The learner: embedders, positional encoding, decoder stack, action head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        d = config.d_model

        def param(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        def const(name, value):
            self.params[name] = Tensor(value, requires_grad=True)

        if config.embedder == "grid20":
            param("obs.conv1.w", (40, GRID_CHANNELS, 3, 3), GRID_CHANNELS * 9)
            param("obs.conv1.b", (40,), GRID_CHANNELS * 9)
            param("obs.conv2.w", (80, 40, 3, 3), 40 * 9)
            param("obs.conv2.b", (80,), 40 * 9)
            param("obs.fc.w", (3920, d), 3920)
            param("obs.fc.b", (d,), 3920)
        else:
            param("obs.conv1.w", (32, 3, 8, 8), 3 * 64)
            param("obs.conv1.b", (32,), 3 * 64)
            param("obs.conv2.w", (64, 32, 4, 4), 32 * 16)
            param("obs.conv2.b", (64,), 32 * 16)
            param("obs.conv3.w", (64, 64, 3, 3), 64 * 9)
            param("obs.conv3.b", (64,), 64 * 9)
            param("obs.fc.w", (3136, d), 3136)
            param("obs.fc.b", (d,), 3136)

        param("act.w", (config.n_actions, d), config.n_actions)
        param("act.b", (d,), config.n_actions)
        const("embed_ln.g", np.ones(d))
        const("embed_ln.b", np.zeros(d))

        for l in range(config.n_layers):
            for proj in ("q", "k", "v", "o"):
                param(f"layer{l}.attn.{proj}.w", (d, d), d)
                param(f"layer{l}.attn.{proj}.b", (d,), d)
            const(f"layer{l}.norm1.g", np.ones(d))
            const(f"layer{l}.norm1.b", np.zeros(d))
            param(f"layer{l}.ff.w1", (d, config.ff_width), d)
            param(f"layer{l}.ff.b1", (config.ff_width,), d)
            param(f"layer{l}.ff.w2", (config.ff_width, d), config.ff_width)
            param(f"layer{l}.ff.b2", (d,), config.ff_width)
            const(f"layer{l}.norm2.g", np.ones(d))
            const(f"layer{l}.norm2.b", np.zeros(d))

        param("out.w", (d, config.n_actions), d)
        param("out.b", (config.n_actions,), d)
        self._pe_cache = sinusoidal_positions(2 * config.max_seq_len, d)

    # -- embedding ---------------------------------------------------------

    def embed_observations(self, obs: np.ndarray) -> Tensor:
        """(B, T, ...) observations to (B, T, d_model) embeddings."""
        p = self.params
        if self.config.embedder == "grid20":
            if obs.shape[-3:] != (7, 7, 3):
                raise ValueError(f"grid20 expects (..., 7, 7, 3) observations, got {obs.shape}")
            b, t = obs.shape[0], obs.shape[1]
            # first conv as a direct GEMM on the 0/1 patch matrix: same numbers
            # as conv2d over one-hot planes, no plane/im2col materialization
            cols = grid_conv_columns(obs)
            w1 = ad.transpose(ad.reshape(p["obs.conv1.w"], (40, GRID_CHANNELS * 9)), (1, 0))
            h = ad.relu(ad.add(ad.matmul(cols, w1), p["obs.conv1.b"]))
            h = ad.transpose(ad.reshape(h, (b * t, 7, 7, 40)), (0, 3, 1, 2))
            h = ad.relu(ad.conv2d(h, p["obs.conv2.w"], p["obs.conv2.b"], stride=1, padding=1))
            h = ad.reshape(h, (b, t, 3920))
        else:
            if obs.shape[-3:] != (3, 84, 84):
                raise ValueError(f"pixel3 expects (..., 3, 84, 84) observations, got {obs.shape}")
            b, t = obs.shape[0], obs.shape[1]
            x = np.asarray(obs, dtype=np.float64).reshape(b * t, 3, 84, 84)
            h = ad.relu(ad.conv2d(x, p["obs.conv1.w"], p["obs.conv1.b"], stride=4))
            h = ad.relu(ad.conv2d(h, p["obs.conv2.w"], p["obs.conv2.b"], stride=2))
            h = ad.relu(ad.conv2d(h, p["obs.conv3.w"], p["obs.conv3.b"], stride=1))
            h = ad.reshape(h, (b, t, 3136))
        return ad.tanh(ad.add(ad.matmul(h, p["obs.fc.w"]), p["obs.fc.b"]))

    def embed_actions(self, actions: np.ndarray) -> Tensor:
        """(B, T) integer action ids to (B, T, d_model) embeddings."""
        actions = np.asarray(actions)
        if actions.size and (actions.min() < 0 or actions.max() >= self.config.n_actions):
            raise ValueError(f"action id out of range [0, {self.config.n_actions})")
        onehot = np.eye(self.config.n_actions)[actions]
        return ad.tanh(ad.add(ad.matmul(onehot, self.params["act.w"]), self.params["act.b"]))

    # -- forward -----------------------------------------------------------

    def forward(self, obs: np.ndarray, actions: np.ndarray, *, train: bool = False,
                rng: np.random.Generator | None = None,
                want_attention: bool = False) -> TransformerOutput:
        """Run the decoder over a batch of trajectories.

        obs is (B, T, ...), actions is (B, T) for teacher forcing or
        (B, T-1) for a rollout context that ends on the latest observation.
        """
        cfg = self.config
        p = self.params
        obs = np.asarray(obs)
        actions = np.asarray(actions)
        b, t = obs.shape[0], obs.shape[1]
        if t > cfg.max_seq_len:
            raise ValueError(f"sequence length {t} exceeds max_seq_len {cfg.max_seq_len}")
        if actions.shape[1] not in (t, t - 1):
            raise ValueError(f"need {t} or {t - 1} actions per row, got {actions.shape[1]}")

        o_emb = self.embed_observations(obs)
        a_emb = self.embed_actions(actions)
        x = ad.interleave_rows(o_emb, a_emb)
        s = t + actions.shape[1]
        x = ad.add(x, self._pe_cache[:s])
        x = ad.layer_norm(x, p["embed_ln.g"], p["embed_ln.b"])
        x = ad.dropout(x, cfg.dropout, train, rng)

        h_count = cfg.n_heads
        dh = cfg.d_model // h_count
        sup_logits = None
        attentions: list[np.ndarray] = []

        for l in range(cfg.n_layers):
            def proj(name, inp):
                return ad.add(ad.matmul(inp, p[f"layer{l}.attn.{name}.w"]), p[f"layer{l}.attn.{name}.b"])

            def heads(z):
                return ad.transpose(ad.reshape(z, (b, s, h_count, dh)), (0, 2, 1, 3))

            q = heads(proj("q", x))
            k = heads(proj("k", x))
            v = heads(proj("v", x))
            logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
            if l == cfg.supervised_layer:
                hs = cfg.supervised_heads
                sup_logits = ad.narrow(logits, 1, hs[0], len(hs))
            attn = ad.causal_softmax_rows(logits)
            if want_attention:
                attentions.append(attn.data.copy())
            ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, s, cfg.d_model))
            x = ad.add(x, proj("o", ctx))
            x = ad.layer_norm(x, p[f"layer{l}.norm1.g"], p[f"layer{l}.norm1.b"])
            ff = ad.relu(ad.add(ad.matmul(x, p[f"layer{l}.ff.w1"]), p[f"layer{l}.ff.b1"]))
            ff = ad.add(ad.matmul(ff, p[f"layer{l}.ff.w2"]), p[f"layer{l}.ff.b2"])
            ff = ad.dropout(ff, cfg.dropout, train, rng)
            x = ad.add(x, ff)
            x = ad.layer_norm(x, p[f"layer{l}.norm2.g"], p[f"layer{l}.norm2.b"])

        obs_tokens = ad.even_rows(x)
        action_logits = ad.add(ad.matmul(obs_tokens, p["out.w"]), p["out.b"])
        return TransformerOutput(action_logits=action_logits, supervised_logits=sup_logits,
                                 attentions=attentions, n_tokens=s)

    # -- inference helpers ---------------------------------------------------

    def predict_action(self, output: TransformerOutput, t: int, row: int = 0) -> int:
        """Greedy action at timestep t; argmax breaks ties toward lower ids."""
        logits = output.action_logits.data
        if t >= logits.shape[1]:
            raise ValueError(f"timestep {t} out of range for {logits.shape[1]} predictions")
        return int(np.argmax(logits[row, t]))

    def clone(self) -> "Transformer":
        other = Transformer(self.config, seed=0)
        for name, tensor in self.params.items():
            other.params[name].data = tensor.data.copy()
        return other


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, header length, JSON header, f64 blobs


def save_checkpoint(model: Transformer, path) -> None:
    names = sorted(model.params)
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        f.write(head)
        for n in names:
            f.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Transformer:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + head_len].decode())
    model = Transformer(ModelConfig.from_dict(header["config"]), seed=0)
    offset = 16 + head_len
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        blob = raw[offset : offset + 8 * size]
        model.params[entry["name"]].data = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        offset += 8 * size
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter blobs")
    return model
