"""The composition policy: a one-hidden-layer tanh MLP from features to a program.

Flat parameter layout (also the checkpoint order)::

    W1 (H x m, row-major) | b1 (H) | W2 (P x H, row-major) | b2 (P)

with ``P = K_max * (n + 1) + 1``. The P outputs are read as ``K_max * n``
step logits (step-major), then ``K_max`` duration pre-activations, then one
length head.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ParamShapeError, PolicyNumericalError
from .primitives import SystemTag

K_MAX = 18
K_MIN = 3
INIT_SEED = 0
CHECKPOINT_VERSION = 1


class DurationMode(str, enum.Enum):
    NORMALIZED = "normalized"
    FREE = "free"


@dataclass(frozen=True)
class PolicyArch:
    m: int
    H: int
    n: int
    K_max: int = K_MAX
    k_min: int = K_MIN

    def __post_init__(self):
        if min(self.m, self.H, self.n, self.K_max) < 1:
            raise ValueError("m, H, n and K_max must be positive")
        if not 1 <= self.k_min <= self.K_max:
            raise ValueError(f"need 1 <= k_min <= K_max, got {self.k_min}, {self.K_max}")

    @property
    def n_outputs(self) -> int:
        return self.K_max * (self.n + 1) + 1

    @property
    def size(self) -> int:
        return (self.m + 1) * self.H + (self.H + 1) * self.n_outputs

    def with_dictionary_size(self, n) -> "PolicyArch":
        return PolicyArch(self.m, self.H, n, self.K_max, self.k_min)


@dataclass(frozen=True)
class PolicyParams:
    arch: PolicyArch
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.theta, dtype=np.float64).reshape(-1)
        if v.size != self.arch.size:
            raise ParamShapeError(f"theta has {v.size} entries, architecture needs {self.arch.size}")
        v.setflags(write=False)
        object.__setattr__(self, "theta", v)

    @classmethod
    def init(cls, arch: PolicyArch, seed: int = INIT_SEED) -> "PolicyParams":
        """Zero biases, weights uniform(-0.5, 0.5) / sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        W1 = rng.uniform(-0.5, 0.5, (arch.H, arch.m)) / np.sqrt(arch.m)
        W2 = rng.uniform(-0.5, 0.5, (arch.n_outputs, arch.H)) / np.sqrt(arch.H)
        return cls(arch, flatten(arch, W1, np.zeros(arch.H), W2, np.zeros(arch.n_outputs)))

    def with_theta(self, theta) -> "PolicyParams":
        return PolicyParams(self.arch, theta)


def extend_dictionary(params: PolicyParams, n_new: int = 1, seed: int = INIT_SEED) -> PolicyParams:
    """Add logit rows for n_new primitives appended to the dictionary.

    Existing weights are kept; the new rows follow the fresh-initialization
    rule (uniform(-0.5, 0.5)/sqrt(H) weights, zero bias).
    """
    a = params.arch
    new = a.with_dictionary_size(a.n + n_new)
    W1, b1, W2, b2 = unflatten(a, params.theta)
    K, n = a.K_max, a.n
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, n_new]))
    fresh = rng.uniform(-0.5, 0.5, (K, n_new, a.H)) / np.sqrt(a.H)
    logits_W = np.concatenate([W2[:K * n].reshape(K, n, a.H), fresh], axis=1)
    logits_b = np.concatenate([b2[:K * n].reshape(K, n), np.zeros((K, n_new))], axis=1)
    W2n = np.concatenate([logits_W.reshape(-1, a.H), W2[K * n:]])
    b2n = np.concatenate([logits_b.reshape(-1), b2[K * n:]])
    return PolicyParams(new, flatten(new, W1, b1, W2n, b2n))


def flatten(arch: PolicyArch, W1, b1, W2, b2) -> np.ndarray:
    shapes = [(arch.H, arch.m), (arch.H,), (arch.n_outputs, arch.H), (arch.n_outputs,)]
    parts = [np.asarray(a, dtype=np.float64) for a in (W1, b1, W2, b2)]
    for a, s in zip(parts, shapes):
        if a.shape != s:
            raise ParamShapeError(f"expected block of shape {s}, got {a.shape}")
    return np.concatenate([a.reshape(-1) for a in parts])


def unflatten(arch: PolicyArch, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size != arch.size:
        raise ParamShapeError(f"theta has shape {theta.shape}, architecture needs ({arch.size},)")
    m, H, P = arch.m, arch.H, arch.n_outputs
    i = 0
    W1 = theta[i:i + H * m].reshape(H, m); i += H * m
    b1 = theta[i:i + H]; i += H
    W2 = theta[i:i + P * H].reshape(P, H); i += P * H
    b2 = theta[i:i + P]
    return W1, b1, W2, b2


def forward(arch: PolicyArch, theta, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Network heads for standardized features X (B, m).

    Returns logits (B, K_max, n), duration pre-activations (B, K_max) and the
    length head (B,).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != arch.m:
        raise ParamShapeError(f"features have {X.shape[1]} entries, policy expects {arch.m}")
    W1, b1, W2, b2 = unflatten(arch, theta)
    with np.errstate(all="ignore"):
        out = np.tanh(X @ W1.T + b1) @ W2.T + b2
    if not np.all(np.isfinite(out)):
        raise PolicyNumericalError("policy produced a non-finite output")
    K, n = arch.K_max, arch.n
    logits = out[:, :K * n].reshape(-1, K, n)
    pre = out[:, K * n:K * (n + 1)]
    return logits, pre, out[:, -1]


def program_length(arch: PolicyArch, head) -> np.ndarray:
    """k = round(k_min + (K_max - k_min) * sigmoid(head)), halves rounded up."""
    k = np.floor(arch.k_min + (arch.K_max - arch.k_min) * expit(head) + 0.5)
    return np.clip(k, arch.k_min, arch.K_max).astype(np.int64)


def decode_batch(arch: PolicyArch, theta, X, T, mode=DurationMode.NORMALIZED, gumbel=None):
    """Vectorized decode for B queries.

    Returns (index (B, K_max), tau (B, K_max), k (B,)); steps beyond k carry
    duration 0. ``np.argmax`` returns the first maximum, so ties go to the
    lowest dictionary index. With ``gumbel`` noise (B, K_max, n) added to the
    logits the argmax is a draw from softmax(z_r) (Gumbel-max), which is how
    training samples programs.
    """
    logits, pre, head = forward(arch, theta, X)
    B = logits.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (B,))
    index = np.argmax(logits if gumbel is None else logits + gumbel, axis=2)
    tau = np.logaddexp(0.0, pre)
    k = program_length(arch, head)
    live = np.arange(arch.K_max)[None, :] < k[:, None]
    tau = np.where(live, tau, 0.0)
    if DurationMode(mode) is DurationMode.NORMALIZED:
        total = tau.sum(axis=1)
        if np.any(total <= 0) or not np.all(np.isfinite(total)):
            raise PolicyNumericalError("durations cannot be normalized")
        tau = tau * (T / total)[:, None]
    return index, tau, k


@dataclass(frozen=True)
class Program:
    """An ordered list of (primitive index, duration) steps.

    In normalized mode the durations are allocation shares of the horizon T.
    Execution (``flow_durations``) runs every selected mechanism for the full
    horizon, splitting T among its steps in proportion to their allocations;
    free-mode durations execute as they are.
    """
    steps: tuple[tuple[int, float], ...]
    T: float
    mode: DurationMode = DurationMode.NORMALIZED

    def __post_init__(self):
        steps = tuple((int(j), float(t)) for j, t in self.steps)
        if any(j < 0 for j, _ in steps):
            raise ValueError("primitive indices must be non-negative")
        if any(not np.isfinite(t) or t < 0 for _, t in steps):
            raise ValueError("durations must be finite and non-negative")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "mode", DurationMode(self.mode))
        if self.mode is DurationMode.NORMALIZED:
            total = sum(t for _, t in steps)
            if abs(total - self.T) > 1e-9 * max(1.0, abs(self.T)):
                raise ValueError(f"normalized durations sum to {total}, not T={self.T}")

    @property
    def k(self) -> int:
        return len(self.steps)

    @property
    def indices(self) -> np.ndarray:
        return np.array([j for j, _ in self.steps], dtype=np.int64)

    @property
    def durations(self) -> np.ndarray:
        return np.array([t for _, t in self.steps], dtype=np.float64)

    def flow_durations(self) -> np.ndarray:
        return flow_durations(self.indices[None], self.durations[None], self.T, self.mode)[0]

    def allocation_shares(self, n: int) -> np.ndarray:
        """Fraction of the total duration assigned to each of n primitives."""
        d = self.durations
        shares = np.bincount(self.indices, weights=d, minlength=n)[:n]
        total = d.sum()
        return shares / total if total > 0 else shares


def flow_durations(index, tau, T, mode=DurationMode.NORMALIZED) -> np.ndarray:
    """Executed durations for a batch of programs (B, K)."""
    tau = np.asarray(tau, dtype=np.float64)
    if DurationMode(mode) is DurationMode.FREE:
        return tau.copy()
    index = np.asarray(index)
    B = tau.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (B,))
    out = np.zeros_like(tau)
    for j in np.unique(index):
        sel = index == j
        per = np.where(sel, tau, 0.0)
        total = per.sum(axis=1, keepdims=True)
        scale = np.divide(T[:, None], total, out=np.zeros_like(total), where=total > 0)
        out = np.where(sel, per * scale, out)
    return out


def decode_program(params: PolicyParams, features, T: float, mode=DurationMode.NORMALIZED) -> Program:
    """Decode one query. ``features`` are standardized inputs (length m)."""
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    if x.size != params.arch.m:
        raise ParamShapeError(f"features have {x.size} entries, policy expects {params.arch.m}")
    if not (np.isfinite(T) and T > 0):
        raise ValueError("T must be positive and finite")
    index, tau, k = decode_batch(params.arch, params.theta, x[None], T, mode)
    kk = int(k[0])
    return Program(tuple(zip(index[0, :kk].tolist(), tau[0, :kk].tolist())), float(T), mode)


# ---------------------------------------------------------------------------
# checkpoint files

def save_checkpoint(path, params: PolicyParams, system, feature_set: str, seed: int,
                    generation: int, extra: dict | None = None) -> None:
    a = params.arch
    header = {
        "format": f"hycop-checkpoint {CHECKPOINT_VERSION}",
        "system": SystemTag(system).value,
        "arch": f"m={a.m} H={a.H} n={a.n} K_max={a.K_max} k_min={a.k_min}",
        "layout": "W1[HxM] b1[H] W2[PxH] b2[P] row-major; P=K_max*(n+1)+1; "
                  "outputs=logits[K_max x n], durations[K_max], length",
        "duration_head": "softplus; cut to k then renormalize to T",
        "features": feature_set,
        "seed": str(int(seed)),
        "generation": str(int(generation)),
        "size": str(a.size),
    }
    for key, value in (extra or {}).items():
        header[str(key)] = str(value).replace("\n", " ")
    lines = [f"{k}: {v}" for k, v in header.items()]
    lines.append("theta:")
    lines.extend(repr(float(v)) for v in params.theta)
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Checkpoint:
    params: PolicyParams
    system: SystemTag
    feature_set: str
    seed: int
    generation: int
    header: dict


def load_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text().splitlines()
    header = {}
    try:
        split = text.index("theta:")
    except ValueError:
        raise ParamShapeError(f"{path}: no 'theta:' section") from None
    for line in text[:split]:
        key, _, value = line.partition(":")
        header[key.strip()] = value.strip()
    fields = dict(kv.split("=") for kv in header["arch"].split())
    arch = PolicyArch(int(fields["m"]), int(fields["H"]), int(fields["n"]),
                      int(fields["K_max"]), int(fields["k_min"]))
    theta = np.array([float(v) for v in text[split + 1:] if v.strip()])
    return Checkpoint(PolicyParams(arch, theta), SystemTag(header["system"]),
                      header.get("features", "dimensionless"), int(header.get("seed", 0)),
                      int(header.get("generation", 0)), header)
