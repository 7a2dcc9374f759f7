"""Residual CNN encoder with channel-wise spectral-temporal attention and a split head.

Shapes at full width (per sample)::

    1x64x96 -conv-> 32x64x96 -ResBlock1-> 32x64x96 -attention-> 32x64x96
      -ResBlock2-> 64x32x48 ... -ResBlock6-> 1024x2x3 -flatten-> 6144
      -split head (128 branches of 48 -> 32 -> 1)-> 128 -L2-> unit vector
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import EncoderConfig
from .errors import FormatError, NumericalError


# --------------------------------------------------------------------------- attention


def attention_weights(x: torch.Tensor, w_temp: torch.Tensor, w_spect: torch.Tensor):
    """Per-channel temporal (over T) and spectral (over F) softmax weights.

    x: (..., C, F, T); w_temp: (C, F); w_spect: (C, T).
    Returns a_temp (..., C, T) and a_spect (..., C, F).
    """
    z_temp = torch.einsum("...cft,cf->...ct", x, w_temp)
    z_spect = torch.einsum("...cft,ct->...cf", x, w_spect)
    return torch.softmax(z_temp, dim=-1), torch.softmax(z_spect, dim=-1)


def attention_mask(x, w_temp, w_spect, scale: float = 100.0):
    """A[c, f, t] = scale * a_spect[c, f] * a_temp[c, t]; each channel sums to ``scale``.

    Accepts numpy arrays or tensors and returns the same kind.
    """
    as_numpy = isinstance(x, np.ndarray)
    x, w_temp, w_spect = (torch.as_tensor(v) for v in (x, w_temp, w_spect))
    _check_attention_shapes(x, w_temp, w_spect)
    a_temp, a_spect = attention_weights(x, w_temp, w_spect)
    mask = scale * a_spect.unsqueeze(-1) * a_temp.unsqueeze(-2)
    return mask.numpy() if as_numpy else mask


def apply_attention(x, mask):
    if tuple(x.shape) != tuple(mask.shape):
        raise ValueError(f"feature map {tuple(x.shape)} and mask {tuple(mask.shape)} differ")
    return mask * x


def _check_attention_shapes(x, w_temp, w_spect):
    c, f, t = x.shape[-3:]
    if tuple(w_temp.shape) != (c, f) or tuple(w_spect.shape) != (c, t):
        raise ValueError(
            f"attention weights {tuple(w_temp.shape)}/{tuple(w_spect.shape)} do not fit "
            f"a {c}x{f}x{t} feature map"
        )


class SpectralTemporalAttentionFn(torch.autograd.Function):
    """X' = A * X with a hand-written backward through both softmaxes and the outer product."""

    @staticmethod
    def forward(ctx, x, w_temp, w_spect, scale):
        a_temp, a_spect = attention_weights(x, w_temp, w_spect)
        mask = scale * a_spect.unsqueeze(-1) * a_temp.unsqueeze(-2)
        ctx.save_for_backward(x, w_temp, w_spect, a_temp, a_spect, mask)
        ctx.scale = scale
        return mask * x

    @staticmethod
    def backward(ctx, grad_out):
        x, w_temp, w_spect, a_temp, a_spect, mask = ctx.saved_tensors
        s = ctx.scale
        grad_mask = grad_out * x
        grad_x = grad_out * mask
        g_spect = s * torch.einsum("...ft,...t->...f", grad_mask, a_temp)
        g_temp = s * torch.einsum("...ft,...f->...t", grad_mask, a_spect)
        # softmax Jacobian-vector products
        dz_spect = a_spect * (g_spect - (g_spect * a_spect).sum(-1, keepdim=True))
        dz_temp = a_temp * (g_temp - (g_temp * a_temp).sum(-1, keepdim=True))
        grad_x = (
            grad_x
            + dz_temp.unsqueeze(-2) * w_temp.unsqueeze(-1)
            + dz_spect.unsqueeze(-1) * w_spect.unsqueeze(-2)
        )
        grad_w_temp = torch.einsum("...ct,...cft->cf", dz_temp, x)
        grad_w_spect = torch.einsum("...cf,...cft->ct", dz_spect, x)
        return grad_x, grad_w_temp, grad_w_spect, None


class SpectralTemporalAttention(nn.Module):
    def __init__(self, channels: int, n_freq: int, n_time: int, scale: float = 100.0):
        super().__init__()
        # zero init: uniform mask scale / (F * T) at the start of training
        self.w_temp = nn.Parameter(torch.zeros(channels, n_freq))
        self.w_spect = nn.Parameter(torch.zeros(channels, n_time))
        self.scale = float(scale)
        self.detach_mask = False

    def mask(self, x: torch.Tensor) -> torch.Tensor:
        return attention_mask(x, self.w_temp, self.w_spect, self.scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.detach_mask:
            return self.mask(x).detach() * x
        _check_attention_shapes(x, self.w_temp, self.w_spect)
        return SpectralTemporalAttentionFn.apply(x, self.w_temp, self.w_spect, self.scale)


# --------------------------------------------------------------------------- network


def _bn(channels: int, cfg: EncoderConfig) -> nn.BatchNorm2d:
    # torch's momentum weights the new batch statistic
    return nn.BatchNorm2d(channels, eps=cfg.bn_eps, momentum=1.0 - cfg.bn_momentum)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int, cfg: EncoderConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = _bn(c_out, cfg)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.bn2 = _bn(c_out, cfg)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)
        else:
            self.shortcut = None

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class SplitHead(nn.Module):
    """d independent branches, each Linear(i, o) -> ELU -> Linear(o, 1)."""

    def __init__(self, dim: int, branch_in: int, hidden: int):
        super().__init__()
        self.dim, self.branch_in = dim, branch_in
        b1, b2 = 1.0 / np.sqrt(branch_in), 1.0 / np.sqrt(hidden)
        self.w1 = nn.Parameter(torch.empty(dim, hidden, branch_in).uniform_(-b1, b1))
        self.b1 = nn.Parameter(torch.empty(dim, hidden).uniform_(-b1, b1))
        self.w2 = nn.Parameter(torch.empty(dim, hidden).uniform_(-b2, b2))
        self.b2 = nn.Parameter(torch.empty(dim).uniform_(-b2, b2))

    def forward(self, flat):
        x = flat.reshape(flat.shape[0], self.dim, self.branch_in)
        h = F.elu(torch.einsum("bdi,doi->bdo", x, self.w1) + self.b1, alpha=1.0)
        return torch.einsum("bdo,do->bd", h, self.w2) + self.b2


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        ch, sp = cfg.channels(), cfg.spatial()
        self.front = nn.Conv2d(1, ch[0], 3, stride=1, padding=1, bias=False)
        self.front_bn = _bn(ch[0], cfg)
        blocks = [ResBlock(ch[0], ch[1], 1, cfg)]
        blocks += [ResBlock(ch[k], ch[k + 1], 2, cfg) for k in range(1, len(ch) - 1)]
        self.blocks = nn.ModuleList(blocks)
        if cfg.attention == "none":
            self.attention = None
        else:
            f, t = sp[0]
            self.attention = SpectralTemporalAttention(ch[0], f, t, cfg.attention_scale)
        self.head = SplitHead(cfg.dim, cfg.branch_in, cfg.branch_hidden)

    def features(self, spec: torch.Tensor) -> list[torch.Tensor]:
        """Every intermediate activation, matching ``cfg.shape_chain()``."""
        x = spec.unsqueeze(1) if spec.dim() == 3 else spec
        acts = [x]
        x = F.relu(self.front_bn(self.front(x)))
        if self.cfg.attention == "front":
            x = self.attention(x)
        acts.append(x)
        for k, block in enumerate(self.blocks):
            x = block(x)
            if k == 0 and self.cfg.attention == "resblock1":
                x = self.attention(x)
            acts.append(x)
        flat = x.flatten(1)
        acts.append(flat)
        y = self.head(flat)
        acts.append(y / y.norm(dim=1, keepdim=True))
        return acts

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        return self.features(spec)[-1]


def build_encoder(cfg: EncoderConfig, seed: int = 0, dtype=torch.float32) -> Encoder:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Encoder(cfg)
    return model.to(dtype)


def _as_batch(specs, model: Encoder) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(specs), dtype=dtype)
    if x.dim() == 2:
        x = x.unsqueeze(0)
    expected = (model.cfg.n_mels, model.cfg.n_frames)
    if tuple(x.shape[-2:]) != expected:
        raise ValueError(f"spectrogram shape {tuple(x.shape[-2:])} != encoder input {expected}")
    return x


def encode_batch(specs, model: Encoder, batch_size: int = 256) -> np.ndarray:
    """Inference-mode embeddings for a (B, F, T) stack; returns (B, d) float32."""
    x = _as_batch(specs, model)
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for i in range(0, len(x), batch_size):
                out.append(model(x[i : i + batch_size]))
    finally:
        model.train(was_training)
    emb = torch.cat(out).cpu().numpy()
    if not np.all(np.isfinite(emb)):
        raise NumericalError("non-finite embedding (numeric blow-up)")
    return emb.astype(np.float32, copy=False)


def encode(spec, model: Encoder) -> np.ndarray:
    return encode_batch(spec, model)[0]


def encode_backward(specs, model: Encoder, upstream, train_mode: bool = False) -> dict[str, np.ndarray]:
    """Gradients of <upstream, encode(specs)> w.r.t. every named parameter."""
    x = _as_batch(specs, model)
    was_training = model.training
    model.train(train_mode)
    try:
        model.zero_grad(set_to_none=False)
        for p in model.parameters():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
        out = model(x)
        if not torch.all(torch.isfinite(out)):
            raise NumericalError("non-finite activations in forward pass")
        g = torch.as_tensor(np.asarray(upstream), dtype=out.dtype).reshape(out.shape)
        out.backward(g)
        return {name: p.grad.detach().cpu().numpy().copy() for name, p in model.named_parameters()}
    finally:
        model.train(was_training)


# --------------------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"AFPC"
CHECKPOINT_VERSION = 1


def _state_tensors(model: Encoder) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")}


def save_checkpoint(model: Encoder, path: str | Path) -> None:
    """Named float32 tensors (row-major, little-endian) plus the architecture config."""
    buf = io.BytesIO()
    cfg_json = json.dumps(model.cfg.__dict__, sort_keys=True).encode("utf-8")
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(cfg_json)))
    buf.write(cfg_json)
    tensors = _state_tensors(model)
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", t.dim()) + struct.pack(f"<{t.dim()}I", *t.shape))
        buf.write(t.detach().cpu().numpy().astype("<f4").tobytes(order="C"))
    payload = buf.getvalue()
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path: str | Path, dtype=torch.float32) -> Encoder:
    data = Path(path).read_bytes()
    if len(data) < 14 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not an encoder checkpoint (bad magic)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: checksum mismatch")
    version, cfg_len = struct.unpack_from("<HI", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    try:
        cfg = EncoderConfig(**json.loads(payload[pos : pos + cfg_len]))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            name = payload[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", payload, pos)
            shape = struct.unpack_from(f"<{ndim}I", payload, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(payload, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = torch.from_numpy(arr.astype(np.float32))
    except (struct.error, ValueError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or malformed checkpoint ({exc})") from exc
    if pos != len(payload):
        raise FormatError(f"{path}: {len(payload) - pos} trailing bytes")
    try:
        model = Encoder(cfg)
    except Exception as exc:
        raise FormatError(f"{path}: invalid architecture config ({exc})") from exc
    expected = _state_tensors(model)
    if set(expected) != set(tensors):
        raise FormatError(f"{path}: tensor names do not match the architecture")
    for name, t in expected.items():
        if tuple(t.shape) != tuple(tensors[name].shape):
            raise FormatError(
                f"{path}: tensor {name} has shape {tuple(tensors[name].shape)}, "
                f"architecture needs {tuple(t.shape)}"
            )
    model.load_state_dict(tensors, strict=False)
    model.eval()
    return model.to(dtype)
