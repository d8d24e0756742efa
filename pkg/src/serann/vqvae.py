"""Discrete speech-code learning over mel spectrograms.

A convolutional encoder maps an 80x256 mel to a 1x64 grid of latent vectors;
each vector snaps to its nearest codebook row (squared Euclidean, ties to
the lowest index), giving 64 integer codes per utterance. A mirrored stack
of transpose convolutions reconstructs the input from the selected rows.

Gradient routing makes the non-differentiable snap trainable: the decoder
path copies its gradient from the quantized grid straight onto the encoder
output, the codebook moves only under the codebook term (encoder output
frozen), and the encoder additionally feels the commitment term (codebook
frozen), scaled by beta.

Encoder stack: five conv layers, kernel 3, strides (2,2), (2,2), (2,1),
(2,1), (5,1). Heights: 80 -> 40 -> 20 -> 10 -> 5 -> 1; widths:
256 -> 128 -> 64 -> 64 -> 64 -> 64. The final stride-5 layer uses no height
padding so its window sits on rows 0..2 of the residual 5-row map.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .coremath.checkpoint import load_checkpoint, load_into, save_checkpoint
from .coremath.layers import Conv2d, ConvTranspose2d
from .coremath.optim import Adam
from .coremath.rng import Rng
from .coremath.tensor import (
    ShapeError,
    Tensor,
    gather_rows,
    mul,
    reshape,
    stop_gradient,
    straight_through,
    tensor_mean,
    transpose,
)

GRID_POSITIONS = 64
INPUT_BANDS = 80
INPUT_FRAMES = 256

# (stride, padding, transpose output_padding) per encoder layer, in encoder
# order; the decoder applies them reversed.
_LAYER_PLAN = (
    ((2, 2), (1, 1), (1, 1)),
    ((2, 2), (1, 1), (1, 1)),
    ((2, 1), (1, 1), (1, 0)),
    ((2, 1), (1, 1), (1, 0)),
    ((5, 1), (0, 1), (2, 0)),
)


class NonFiniteLossError(FloatingPointError):
    pass


class CodebookError(ValueError):
    pass


@dataclass
class VqVaeConfig:
    codebook_size: int = 8192
    code_dim: int = 512
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    kernel: int = 3
    batch_size: int = 256
    epochs: int = 1000
    learning_rate: float = 1e-4
    beta: float = 0.25

    def __post_init__(self):
        if self.codebook_size <= 0 or self.code_dim <= 0:
            raise ValueError("codebook_size and code_dim must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if len(self.channels) != len(_LAYER_PLAN):
            raise ValueError(f"channels must list {len(_LAYER_PLAN)} widths")
        if self.channels[-1] != self.code_dim:
            raise ValueError(
                f"last channel width ({self.channels[-1]}) must equal code_dim ({self.code_dim})"
            )
        h, w = INPUT_BANDS, INPUT_FRAMES
        for (sh, sw), (ph, pw), _ in _LAYER_PLAN:
            h = (h + 2 * ph - self.kernel) // sh + 1
            w = (w + 2 * pw - self.kernel) // sw + 1
        if h * w != GRID_POSITIONS:
            raise ValueError(f"encoder grid is {h}x{w}, expected {GRID_POSITIONS} positions")

    @classmethod
    def desk(cls) -> "VqVaeConfig":
        """CI-sized profile (small codebook, thin channels, a faster rate);
        the full-size configuration stays the default."""
        return cls(
            codebook_size=256,
            code_dim=64,
            channels=(4, 8, 16, 32, 64),
            epochs=50,
            batch_size=32,
            learning_rate=5e-3,
        )

    def to_json(self) -> dict:
        out = asdict(self)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "VqVaeConfig":
        data = dict(data)
        data["channels"] = tuple(data["channels"])
        return cls(**data)


@dataclass
class LossBundle:
    reconstruction: float
    codebook: float
    commitment: float
    total: float


class VqVae:
    def __init__(self, config: VqVaeConfig, rng: Rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        enc_rng = rng.spawn("encoder")
        dec_rng = rng.spawn("decoder")
        widths = config.channels
        self.encoder: list[Conv2d] = []
        in_ch = 1
        for i, ((stride, padding, _), out_ch) in enumerate(zip(_LAYER_PLAN, widths)):
            last = i == len(widths) - 1
            self.encoder.append(
                Conv2d(
                    in_ch,
                    out_ch,
                    config.kernel,
                    stride,
                    padding,
                    enc_rng.spawn(f"layer{i}"),
                    activation=None if last else "relu",
                    dtype=dtype,
                )
            )
            in_ch = out_ch
        self.decoder: list[ConvTranspose2d] = []
        dec_out = (*widths[:-1][::-1], 1)
        in_ch = config.code_dim
        for i, ((stride, padding, out_pad), out_ch) in enumerate(
            zip(_LAYER_PLAN[::-1], dec_out)
        ):
            last = i == len(dec_out) - 1
            self.decoder.append(
                ConvTranspose2d(
                    in_ch,
                    out_ch,
                    config.kernel,
                    stride,
                    padding,
                    out_pad,
                    dec_rng.spawn(f"layer{i}"),
                    activation=None if last else "relu",
                    dtype=dtype,
                )
            )
            in_ch = out_ch
        k, d = config.codebook_size, config.code_dim
        init = rng.spawn("codebook").uniform(-1.0 / k, 1.0 / k, (k, d), dtype)
        self.codebook = Tensor(init, requires_grad=True)
        _check_codebook_rows(self.codebook.data)

    # -- plumbing --------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.encoder):
            out.update(layer.params(f"enc.{i}"))
        for i, layer in enumerate(self.decoder):
            out.update(layer.params(f"dec.{i}"))
        out["codebook"] = self.codebook
        return out

    def save(self, path) -> None:
        save_checkpoint(path, {name: t.data for name, t in self.params().items()})
        sidecar = Path(str(path) + ".config.json")
        sidecar.write_text(json.dumps(self.config.to_json(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path, config: VqVaeConfig | None = None) -> "VqVae":
        if config is None:
            sidecar = Path(str(path) + ".config.json")
            if not sidecar.exists():
                raise FileNotFoundError(
                    f"{sidecar}: config sidecar missing; pass the configuration explicitly"
                )
            config = VqVaeConfig.from_json(json.loads(sidecar.read_text()))
        model = cls(config, Rng(0))
        load_into(model.params(), load_checkpoint(path))
        return model

    # -- forward ---------------------------------------------------------

    def encode(self, mels: Tensor) -> Tensor:
        """(N, 1, 80, 256) -> latent grid (N, d, 1, 64)."""
        if mels.ndim != 4 or mels.shape[1] != 1 or mels.shape[2:] != (INPUT_BANDS, INPUT_FRAMES):
            raise ShapeError(
                f"encoder input must be (N, 1, {INPUT_BANDS}, {INPUT_FRAMES}), got {mels.shape}"
            )
        out = mels
        for layer in self.encoder:
            out = layer(out)
        return out

    def decode(self, z_q: Tensor) -> Tensor:
        """(N, d, 1, 64) -> reconstruction (N, 1, 80, 256)."""
        d = self.config.code_dim
        if z_q.ndim != 4 or z_q.shape[1:] != (d, 1, GRID_POSITIONS):
            raise ShapeError(
                f"decoder input must be (N, {d}, 1, {GRID_POSITIONS}), got {z_q.shape}"
            )
        out = z_q
        for layer in self.decoder:
            out = layer(out)
        return out


def _check_codebook_rows(embeddings: np.ndarray) -> None:
    rows = {row.tobytes() for row in embeddings}
    if len(rows) != embeddings.shape[0]:
        raise CodebookError("codebook initialization produced identical rows")
    if not np.all(np.isfinite(embeddings)):
        raise CodebookError("codebook contains non-finite entries")


def nearest_codes(z: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Index of the nearest embedding row per latent vector.

    Distances are accumulated in float64 from explicit squared differences,
    in row blocks sized to bound memory; ties resolve to the lowest index.
    """
    if embeddings.size == 0:
        raise CodebookError("codebook is empty")
    z64 = np.asarray(z, dtype=np.float64)
    e64 = np.asarray(embeddings, dtype=np.float64)
    if z64.ndim != 2 or e64.ndim != 2 or z64.shape[1] != e64.shape[1]:
        raise ShapeError(
            f"latent dim {z64.shape[-1]} does not match embedding dim {e64.shape[-1]}"
        )
    block = max(1, int(2e7 // max(e64.size, 1)))
    codes = np.empty(len(z64), dtype=np.int64)
    for start in range(0, len(z64), block):
        chunk = z64[start : start + block]
        dist = ((chunk[:, None, :] - e64[None, :, :]) ** 2).sum(axis=-1)
        codes[start : start + len(chunk)] = dist.argmin(axis=1)
    return codes


def flatten_grid(z_e: Tensor) -> Tensor:
    """(N, d, 1, 64) -> (N * 64, d), position-major."""
    n, d, h, w = z_e.shape
    return reshape(transpose(z_e, (0, 2, 3, 1)), (n * h * w, d))


def unflatten_grid(values: np.ndarray, n: int, d: int) -> np.ndarray:
    return values.reshape(n, 1, GRID_POSITIONS, d).transpose(0, 3, 1, 2)


def quantize(z_e: Tensor, codebook: Tensor) -> tuple[Tensor, np.ndarray]:
    """Snap each latent position to its nearest codebook row.

    Returns the quantized grid (same shape as ``z_e``, constant values) and
    the integer codes, one per position.
    """
    n, d = z_e.shape[0], z_e.shape[1]
    flat = flatten_grid(z_e)
    codes = nearest_codes(flat.data, codebook.data)
    z_q_values = unflatten_grid(codebook.data[codes], n, d)
    return Tensor(z_q_values.astype(z_e.dtype)), codes


def vqvae_losses(
    x: Tensor, x_hat: Tensor, z_e: Tensor, z_q: Tensor, e_selected: Tensor, beta: float
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Reconstruction, codebook, and commitment terms plus their sum.

    Each term is a mean squared difference. The codebook term freezes the
    encoder side so only embeddings move; the commitment term freezes the
    selected embeddings so only the encoder moves.
    """

    def sq_mean(a: Tensor, b: Tensor) -> Tensor:
        diff = a - b
        return tensor_mean(mul(diff, diff))

    recon = sq_mean(x, x_hat)
    codebook_loss = sq_mean(stop_gradient(z_e), e_selected)
    commitment = mul(Tensor(np.asarray(beta, dtype=z_e.dtype)), sq_mean(z_e, stop_gradient(z_q)))
    total = recon + codebook_loss + commitment
    return recon, codebook_loss, commitment, total


def train_step(model: VqVae, batch: np.ndarray, adam: Adam) -> tuple[LossBundle, np.ndarray]:
    """One optimization step on a (B, 1, 80, 256) batch; returns losses and
    the codes picked this step."""
    x = Tensor(np.asarray(batch, dtype=model.dtype))
    z_e = model.encode(x)
    flat = flatten_grid(z_e)
    codes = nearest_codes(flat.data, model.codebook.data)
    e_selected = gather_rows(model.codebook, codes)
    z_q_values = unflatten_grid(model.codebook.data[codes], x.shape[0], model.config.code_dim)
    decoder_in = straight_through(z_e, z_q_values)
    x_hat = model.decode(decoder_in)
    recon, cb, commit, total = vqvae_losses(
        x, x_hat, flat, e_selected, e_selected, model.config.beta
    )
    losses = LossBundle(
        reconstruction=float(recon.data),
        codebook=float(cb.data),
        commitment=float(commit.data),
        total=float(total.data),
    )
    if not np.isfinite(losses.total):
        raise NonFiniteLossError(
            f"non-finite loss at optimizer step {adam.state.t + 1}: "
            f"recon={losses.reconstruction}, codebook={losses.codebook}, "
            f"commitment={losses.commitment}"
        )
    total.backward()
    adam.step()
    adam.zero_grad()
    return losses, codes


def reconstruction_loss(model: VqVae, mels: np.ndarray, batch_size: int = 32) -> float:
    """Mean squared reconstruction error over a (N, 80, 256) array."""
    total = 0.0
    n = len(mels)
    for start in range(0, n, batch_size):
        chunk = np.asarray(mels[start : start + batch_size], dtype=model.dtype)
        x = Tensor(chunk[:, None, :, :])
        z_e = model.encode(x)
        z_q, _ = quantize(z_e, model.codebook)
        x_hat = model.decode(z_q)
        total += float(((x.data - x_hat.data) ** 2).mean()) * len(chunk)
    return total / n


def train_vqvae(
    mels: np.ndarray,
    config: VqVaeConfig,
    seed: int,
    epochs: int | None = None,
    holdout: np.ndarray | None = None,
    history_path=None,
) -> tuple[VqVae, list[dict]]:
    """Train on a (N, 80, 256) array of normalized mels.

    Per-epoch history records the mean of each loss term; when ``holdout``
    is given its reconstruction error is tracked as well.
    """
    if len(mels) == 0:
        raise ValueError("training set is empty")
    rng = Rng(seed)
    model = VqVae(config, rng.spawn("model"))
    shuffle_rng = rng.spawn("shuffle")
    adam = Adam(model.params(), config.learning_rate)
    epochs = config.epochs if epochs is None else epochs
    batch = config.batch_size
    data = np.asarray(mels, dtype=model.dtype)[:, None, :, :]
    history: list[dict] = []
    writer = Path(history_path).open("w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(1, epochs + 1):
            order = shuffle_rng.permutation(len(data))
            sums = np.zeros(4)
            steps = 0
            for start in range(0, len(data), batch):
                chunk = data[order[start : start + batch]]
                losses, _ = train_step(model, chunk, adam)
                sums += (losses.reconstruction, losses.codebook, losses.commitment, losses.total)
                steps += 1
            entry = {
                "epoch": epoch,
                "reconstruction": sums[0] / steps,
                "codebook": sums[1] / steps,
                "commitment": sums[2] / steps,
                "total": sums[3] / steps,
            }
            if holdout is not None:
                entry["holdout_reconstruction"] = reconstruction_loss(model, holdout)
            history.append(entry)
            if writer:
                writer.write(json.dumps(entry, sort_keys=True) + "\n")
    finally:
        if writer:
            writer.close()
    return model, history


def extract_codes(
    mels_by_id: Mapping[str, np.ndarray], model: VqVae
) -> dict[str, list[int]]:
    """Deterministic 64-code sequence per utterance, keyed by id."""
    out: dict[str, list[int]] = {}
    for utterance_id in sorted(mels_by_id):
        mel = np.asarray(mels_by_id[utterance_id], dtype=model.dtype)
        x = Tensor(mel[None, None, :, :])
        z_e = model.encode(x)
        _, codes = quantize(z_e, model.codebook)
        out[utterance_id] = [int(c) for c in codes]
    return out


def write_codes(path, codes_by_id: Mapping[str, Sequence[int]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for utterance_id in sorted(codes_by_id):
            record = {"utterance_id": utterance_id, "codes": list(codes_by_id[utterance_id])}
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def load_codes(path) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out[record["utterance_id"]] = [int(c) for c in record["codes"]]
    return out
