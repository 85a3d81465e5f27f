"""Per-unit surrogate: normalized two-hidden-layer softplus MLP with a linear
skip connection, plus binary checkpoint (de)serialization."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var

HIDDEN = 100
SIGMA_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"FTCKPT1"

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w_out", "b_out", "w_skip")


class CheckpointError(Exception):
    """Checkpoint file is malformed, truncated, or violates invariants."""


@dataclass
class NormStats:
    """Per-variable mean and standard deviation in physical units.

    Variables whose raw standard deviation falls below the floor are
    "pinned": the floor keeps the stored sigma positive, while the
    normalization maps treat the variable as the constant it is. A pinned
    input normalizes to exactly 0 (deviations from the constant carry no
    trainable signal and would otherwise be amplified by 1/sigma_floor);
    a pinned output reverse-normalizes to exactly its mean.
    """

    mu: np.ndarray
    sigma: np.ndarray
    pinned: np.ndarray  # bool mask, True where raw sigma was below the floor

    @classmethod
    def from_data(cls, x: np.ndarray) -> "NormStats":
        mu = x.mean(axis=0)
        sigma = x.std(axis=0)
        pinned = sigma < SIGMA_FLOOR
        return cls(mu=mu, sigma=np.maximum(sigma, SIGMA_FLOOR), pinned=pinned)

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(mu=np.zeros(dim), sigma=np.ones(dim),
                   pinned=np.zeros(dim, dtype=bool))

    @property
    def inv_sigma_masked(self) -> np.ndarray:
        """1/sigma with pinned entries zeroed (forward normalization gain)."""
        inv = 1.0 / self.sigma
        inv[self.pinned] = 0.0
        return inv

    @property
    def sigma_masked(self) -> np.ndarray:
        """sigma with pinned entries zeroed (reverse normalization gain)."""
        sig = self.sigma.copy()
        sig[self.pinned] = 0.0
        return sig

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) * self.inv_sigma_masked

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.sigma_masked + self.mu


class MlpSurrogate:
    """softplus MLP with two hidden layers of 100 and a dense input->output skip.

    Forward pipeline: normalize input, two softplus hidden layers, linear
    output layer plus skip applied to the normalized input, then reverse
    normalization back to physical units.
    """

    def __init__(self, d_in: int, d_out: int, params: dict[str, np.ndarray],
                 input_norm: NormStats, output_norm: NormStats):
        self.d_in = d_in
        self.d_out = d_out
        self.params = params
        self.input_norm = input_norm
        self.output_norm = output_norm
        self._validate()

    def _validate(self) -> None:
        shapes = {
            "w1": (self.d_in, HIDDEN), "b1": (HIDDEN,),
            "w2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
            "w_out": (HIDDEN, self.d_out), "b_out": (self.d_out,),
            "w_skip": (self.d_in, self.d_out),
        }
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape "
                                 f"{self.params[name].shape}, expected {shape}")
        if np.any(self.input_norm.sigma <= 0) or np.any(self.output_norm.sigma <= 0):
            raise ValueError("normalization sigma must be positive")

    @classmethod
    def initialize(cls, d_in: int, d_out: int, input_norm: NormStats,
                   output_norm: NormStats, seed: int) -> "MlpSurrogate":
        """Seeded uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization."""
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
        def layer(fan_in, fan_out):
            lim = np.sqrt(1.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))
        params = {
            "w1": layer(d_in, HIDDEN), "b1": np.zeros(HIDDEN),
            "w2": layer(HIDDEN, HIDDEN), "b2": np.zeros(HIDDEN),
            "w_out": layer(HIDDEN, d_out), "b_out": np.zeros(d_out),
            "w_skip": layer(d_in, d_out),
        }
        return cls(d_in, d_out, params, input_norm, output_norm)

    def copy(self) -> "MlpSurrogate":
        return MlpSurrogate(
            self.d_in, self.d_out,
            {k: v.copy() for k, v in self.params.items()},
            NormStats(self.input_norm.mu.copy(), self.input_norm.sigma.copy(),
                      self.input_norm.pinned.copy()),
            NormStats(self.output_norm.mu.copy(), self.output_norm.sigma.copy(),
                      self.output_norm.pinned.copy()))

    # -- inference ---------------------------------------------------------

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass; accepts a vector or an (N, d_in) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_in:
            raise ValueError(f"input has {x.shape[-1]} variables, expected {self.d_in}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to surrogate forward pass")
        p = self.params
        xn = self.input_norm.normalize(x)
        h1 = _softplus_np(xn @ p["w1"] + p["b1"])
        h2 = _softplus_np(h1 @ p["w2"] + p["b2"])
        z = h2 @ p["w_out"] + p["b_out"] + xn @ p["w_skip"]
        return self.output_norm.denormalize(z)

    # -- tape recording ------------------------------------------------------

    def make_param_vars(self, tape: Tape) -> dict[str, Var]:
        """Register all parameters as independent tape inputs."""
        return {name: tape.input(self.params[name]) for name in PARAM_NAMES}

    def record(self, tape: Tape, x: Var, pvars: dict[str, Var] | None = None) -> Var:
        """Record the forward pass on `tape`; x is a vector or batch Var.

        When `pvars` is omitted the parameters enter as constants (useful
        for Jacobians with respect to the input only).
        """
        if pvars is None:
            pvars = {name: tape.constant(self.params[name]) for name in PARAM_NAMES}
        inv_sig_in = tape.constant(self.input_norm.inv_sigma_masked)
        mu_in = tape.constant(self.input_norm.mu)
        sig_out = tape.constant(self.output_norm.sigma_masked)
        mu_out = tape.constant(self.output_norm.mu)
        xn = (x - mu_in) * inv_sig_in
        h1 = ag.softplus(ag.affine(xn, pvars["w1"], pvars["b1"]))
        h2 = ag.softplus(ag.affine(h1, pvars["w2"], pvars["b2"]))
        z = ag.affine(h2, pvars["w_out"], pvars["b_out"]) + (xn @ pvars["w_skip"])
        return z * sig_out + mu_out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "MlpSurrogate":
        return load_checkpoint(path)


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# -- checkpoint file format -------------------------------------------------
#
# magic "FTCKPT1" | u32 d_in | u32 d_out | u32 hidden |
# parameter blocks in PARAM_NAMES order, row-major float64 little-endian |
# mu_in | sigma_in | pinned_in (f64 0/1) | mu_out | sigma_out | pinned_out


def save_checkpoint(model: MlpSurrogate, path) -> None:
    blocks = [model.params[name] for name in PARAM_NAMES]
    blocks += [model.input_norm.mu, model.input_norm.sigma,
               model.input_norm.pinned.astype(np.float64),
               model.output_norm.mu, model.output_norm.sigma,
               model.output_norm.pinned.astype(np.float64)]
    payload = b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks)
    header = CHECKPOINT_MAGIC + struct.pack("<III", model.d_in, model.d_out, HIDDEN)
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> MlpSurrogate:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: truncated header")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    d_in, d_out, hidden = struct.unpack_from("<III", raw, len(CHECKPOINT_MAGIC))
    if hidden != HIDDEN:
        raise CheckpointError(f"{path}: unsupported hidden width {hidden}")
    sizes = [d_in * HIDDEN, HIDDEN, HIDDEN * HIDDEN, HIDDEN, HIDDEN * d_out,
             d_out, d_in * d_out, d_in, d_in, d_in, d_out, d_out, d_out]
    expected = len(CHECKPOINT_MAGIC) + 12 + 8 * sum(sizes)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = len(CHECKPOINT_MAGIC) + 12
    blocks = []
    for size in sizes:
        blocks.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).copy())
        offset += 8 * size
    shapes = [(d_in, HIDDEN), (HIDDEN,), (HIDDEN, HIDDEN), (HIDDEN,),
              (HIDDEN, d_out), (d_out,), (d_in, d_out)]
    params = {name: blocks[i].reshape(shapes[i]) for i, name in enumerate(PARAM_NAMES)}
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{path}: non-finite values in parameter {name}")
    mu_in, sig_in, pin_in, mu_out, sig_out, pin_out = blocks[7:]
    for label, sig in (("input", sig_in), ("output", sig_out)):
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise CheckpointError(
                f"{path}: {label} sigma contains zero/non-positive entries")
    input_norm = NormStats(mu_in, sig_in, pin_in > 0.5)
    output_norm = NormStats(mu_out, sig_out, pin_out > 0.5)
    return MlpSurrogate(int(d_in), int(d_out), params, input_norm, output_norm)


# -- manifest: unit name -> checkpoint path ----------------------------------


def save_manifest(models: dict[str, MlpSurrogate], directory) -> Path:
    """Write one checkpoint per unit plus a manifest mapping names to files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(models):
        fname = f"{name}.ckpt"
        save_checkpoint(models[name], directory / fname)
        entries[name] = fname
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"units": entries}, indent=2, sort_keys=True))
    return manifest


def load_manifest(manifest_path) -> dict[str, MlpSurrogate]:
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{manifest_path}: unreadable manifest ({exc})")
    models = {}
    for name, fname in spec["units"].items():
        models[name] = load_checkpoint(manifest_path.parent / fname)
    return models


def unit_seed(master_seed: int, unit_name: str) -> int:
    """Stable per-unit seed derived from the master seed and unit name."""
    return (master_seed * 1000003 + zlib.crc32(unit_name.encode())) & 0x7FFFFFFF
