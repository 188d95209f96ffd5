"""Synthetic multimedia instruction channel.

Token vocabulary: 12 content tokens (3 arms x 4 slots) plus STOP. Audio
renders each token as one 2048-sample sine window at a token-specific
frequency; vision renders one 16x16 glyph frame per token. Parallel branch
encoders (conv1d / conv2d / lookup) project every window into a shared
32-dim unit-norm latent space scored by a single shared classifier head.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import SLOT_NAMES
from .instruction import Instruction, Source, Waypoint
from .params import ParamSet
from .tensor import Graph

Array = np.ndarray

N_TOKENS = 13
STOP = 12
SAMPLE_RATE = 8000
WINDOW = 2048
FRAME = 16
LATENT_DIM = 32
MAX_CONTENT_TOKENS = 10

# per-token audio base frequency in Hz
TOKEN_FREQS = np.array([400.0 + 60.0 * k for k in range(N_TOKENS)])

# Uniform frequency jitter just below the band-disjointness bound
# 60/(f_11+f_12) = 2.75%: every token band stays separable in a clean
# clip, but the narrow top-of-vocabulary gaps (5.5 Hz) leave margins
# that additive noise can genuinely erode.
FREQ_JITTER = 0.025


def token_of(arm: int, slot: str) -> int:
    return (arm - 1) * 4 + SLOT_NAMES.index(slot.upper())


def arm_slot_of(token: int) -> tuple[int, str]:
    if not 0 <= token < STOP:
        raise ValueError(f"token {token} is not a content token")
    return token // 4 + 1, SLOT_NAMES[token % 4]


def tokens_of(instruction: Instruction) -> list[int]:
    toks = []
    for w in instruction.waypoints:
        if w.slot is None:
            raise ValueError("only slot-addressed waypoints have tokens")
        toks.append(token_of(w.arm, w.slot))
    return toks


def _make_glyphs() -> Array:
    """Deterministic 16x16 binary glyphs, pairwise Hamming distance >= 32."""
    rng = np.random.default_rng(1905)
    while True:
        bits = (rng.random((N_TOKENS, FRAME * FRAME)) < 0.5).astype(np.float64)
        dists = ((bits[:, None, :] != bits[None, :, :]).sum(axis=2)
                 + np.eye(N_TOKENS, dtype=int) * FRAME * FRAME)
        if dists.min() >= 32:
            return bits.reshape(N_TOKENS, FRAME, FRAME)


GLYPHS = _make_glyphs()


# -- renderers ---------------------------------------------------------------

def render_audio(tokens: list[int], rng: np.random.Generator,
                 jitter: float = FREQ_JITTER) -> Array:
    """One sine window per token plus a STOP window; random phase and
    per-window frequency jitter."""
    seq = list(tokens) + [STOP]
    t = np.arange(WINDOW) / SAMPLE_RATE
    clip = np.empty(len(seq) * WINDOW)
    for i, tok in enumerate(seq):
        f = TOKEN_FREQS[tok] * (1.0 + rng.uniform(-jitter, jitter))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        clip[i * WINDOW:(i + 1) * WINDOW] = np.sin(2 * math.pi * f * t + phase)
    return clip


def render_frames(tokens: list[int]) -> Array:
    """Glyph frame per token plus STOP; shape (M+1, 16, 16) in [0, 1]."""
    seq = list(tokens) + [STOP]
    return GLYPHS[seq].copy()


def add_audio_noise(clip: Array, rng: np.random.Generator,
                    snr_db: float = 20.0) -> Array:
    """Additive white Gaussian noise at the given SNR; output clipped to the
    [-2, 2] amplitude contract."""
    p_signal = float(np.mean(clip * clip))
    if p_signal <= 0.0:
        raise ValueError("cannot compute SNR of a silent clip")
    if math.isinf(snr_db):
        return clip.copy()
    sigma = math.sqrt(p_signal / (10.0 ** (snr_db / 10.0)))
    return np.clip(clip + rng.normal(0.0, sigma, clip.shape), -2.0, 2.0)


def apply_cutout(frame: Array, rng: np.random.Generator,
                 frac: Optional[float] = None) -> Array:
    """Zero a connected axis-aligned block of exactly round(frac*256) pixels.

    Side lengths are drawn to fit the frame; when the target area has no
    h x w factorization with both sides <= 16, the block is a rectangle
    minus a partial last row so the zeroed count stays exact.
    """
    if frame.shape != (FRAME, FRAME):
        raise ValueError(f"frame shape {frame.shape}, expected 16x16")
    if frac is None:
        frac = rng.uniform(0.10, 0.20)
    area = int(round(frac * FRAME * FRAME))
    pairs = [(h, area // h) for h in range(1, FRAME + 1)
             if area % h == 0 and area // h <= FRAME]
    out = frame.copy()
    if pairs:
        h, w = pairs[int(rng.integers(len(pairs)))]
        r0 = int(rng.integers(FRAME - h + 1))
        c0 = int(rng.integers(FRAME - w + 1))
        out[r0:r0 + h, c0:c0 + w] = 0.0
    else:
        w = int(rng.integers(math.ceil(area / FRAME), FRAME + 1))
        h = math.ceil(area / w)
        r0 = int(rng.integers(FRAME - h + 1))
        c0 = int(rng.integers(FRAME - w + 1))
        full, rem = divmod(area, w)
        out[r0:r0 + full, c0:c0 + w] = 0.0
        if rem:
            out[r0 + full, c0:c0 + rem] = 0.0
    return out


def corrupt_frames(frames: Array, rng: np.random.Generator) -> Array:
    return np.stack([apply_cutout(f, rng) for f in frames])


# -- encoder parameters ------------------------------------------------------

# The audio branch funnels 16 short correlator channels into a 3-channel
# layer before pooling. The narrow neck keeps the 13 classes closely
# packed in feature space, so eval-time noise produces the graded
# accuracy loss the benchmark measures instead of being averaged away.
A_CH1, A_K1, A_S1 = 16, 32, 16
A_CH2, A_K2, A_S2 = 3, 5, 4
V_CH1, V_CH2 = 8, 16

# Training corrupts both modalities at lighter levels than evaluation
# (audio 32 dB vs 20 dB SNR; cutout 6-12% vs 10-20% area): margins grow
# enough for near-perfect clean accuracy while full-strength corruption
# still crosses them, so the benchmark sees graded degradation.
TRAIN_SNR_DB = 32.0
TRAIN_CUTOUT = (0.06, 0.12)


def init_encoder_params(rng: np.random.Generator) -> ParamSet:
    def u(*shape, fan):
        bound = 1.0 / math.sqrt(fan)
        return rng.uniform(-bound, bound, shape)

    return ParamSet([
        ("audio.k1", u(A_CH1, 1, A_K1, fan=A_K1)),
        ("audio.k2", u(A_CH2, A_CH1, A_K2, fan=A_CH1 * A_K2)),
        ("audio.proj.w", u(A_CH2, LATENT_DIM, fan=A_CH2)),
        ("audio.proj.b", np.zeros(LATENT_DIM)),
        ("vis.k1", u(V_CH1, 1, 3, 3, fan=9)),
        ("vis.k2", u(V_CH2, V_CH1, 3, 3, fan=V_CH1 * 9)),
        ("vis.proj.w", u(V_CH2, LATENT_DIM, fan=V_CH2)),
        ("vis.proj.b", np.zeros(LATENT_DIM)),
        ("sym.table", rng.standard_normal((N_TOKENS, LATENT_DIM)) * 0.5),
        ("head.w", u(LATENT_DIM, N_TOKENS, fan=LATENT_DIM)),
        ("head.b", np.zeros(N_TOKENS)),
    ])


def _audio_branch_g(g: Graph, pids: dict, windows: Array) -> int:
    x = g.constant(windows[:, None, :])                      # (N,1,2048)
    h = g.relu(g.conv1d(x, pids["audio.k1"], stride=A_S1))   # (N,16,127)
    h = g.relu(g.conv1d(h, pids["audio.k2"], stride=A_S2))   # (N,3,31)
    pooled = g.mean_axis(h, axis=2)                          # (N,3)
    emb = g.add(g.matmul(pooled, pids["audio.proj.w"]), pids["audio.proj.b"])
    return g.normalize_rows(emb)


def _visual_branch_g(g: Graph, pids: dict, frames: Array) -> int:
    x = g.constant(frames[:, None, :, :])                    # (N,1,16,16)
    h = g.relu(g.conv2d(x, pids["vis.k1"], stride=2))        # (N,8,7,7)
    h = g.relu(g.conv2d(h, pids["vis.k2"], stride=2))        # (N,16,3,3)
    n, c = frames.shape[0], V_CH2
    pooled = g.mean_axis(g.reshape(h, (n, c, 9)), axis=2)    # (N,16)
    emb = g.add(g.matmul(pooled, pids["vis.proj.w"]), pids["vis.proj.b"])
    return g.normalize_rows(emb)


def _symbolic_branch_g(g: Graph, pids: dict, tokens: Array) -> int:
    return g.normalize_rows(g.take_rows(pids["sym.table"], tokens))


def _encode(branch, params: ParamSet, data: Array) -> Array:
    g = Graph()
    pids = {name: g.constant(value) for name, value in params.items()}
    return g.value(branch(g, pids, data))


def encode_audio(clip: Array, params: ParamSet) -> Array:
    """Unit-norm 32-dim embedding per 2048-sample window."""
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 1 or clip.size == 0 or clip.size % WINDOW:
        raise ValueError(f"clip length {clip.size} is not a multiple of {WINDOW}")
    windows = clip.reshape(-1, WINDOW)
    return _encode(_audio_branch_g, params, windows)


def encode_visual(frames: Array, params: ParamSet) -> Array:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1:] != (FRAME, FRAME):
        raise ValueError(f"frames shape {frames.shape}, expected (N,16,16)")
    return _encode(_visual_branch_g, params, frames)


def encode_symbolic(tokens: list[int], params: ParamSet) -> Array:
    toks = np.asarray(list(tokens) + [STOP], dtype=np.int64)
    return _encode(_symbolic_branch_g, params, toks)


def fuse(audio_embs: Optional[Array], visual_embs: Optional[Array]) -> Array:
    """Mean of available modality embeddings, re-normalized per window."""
    if audio_embs is None and visual_embs is None:
        raise ValueError("fuse needs at least one modality")
    if audio_embs is None:
        merged = np.asarray(visual_embs, dtype=np.float64)
    elif visual_embs is None:
        merged = np.asarray(audio_embs, dtype=np.float64)
    else:
        a = np.asarray(audio_embs, dtype=np.float64)
        v = np.asarray(visual_embs, dtype=np.float64)
        if a.shape != v.shape:
            raise ValueError(f"window counts differ: {a.shape} vs {v.shape}")
        merged = 0.5 * (a + v)
    norms = np.linalg.norm(merged, axis=1, keepdims=True) + 1e-12
    return merged / norms


def classify(embeddings: Array, params: ParamSet) -> Array:
    logits = embeddings @ params["head.w"] + params["head.b"]
    return logits.argmax(axis=1)


@dataclass
class DecodeResult:
    instruction: Optional[Instruction]
    tokens: list[int]
    truncated: bool = False
    error: Optional[str] = None


def decode(embeddings: Array, params: ParamSet,
           source: Source = Source.MACHINE) -> DecodeResult:
    """Per-window argmax classification, truncated at the first STOP."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("decode needs at least one embedding row")
    preds = classify(embeddings, params)
    content: list[int] = []
    truncated = True  # until a STOP ends the sequence
    for i, p in enumerate(preds):
        if p == STOP:
            truncated = False
            break
        content.append(int(p))
        if len(content) == MAX_CONTENT_TOKENS:
            truncated = not (i + 1 < len(preds) and preds[i + 1] == STOP)
            break
    if not content:
        return DecodeResult(None, [], truncated, "decoded no content tokens")
    waypoints = [Waypoint.from_slot(*arm_slot_of(t)) for t in content]
    return DecodeResult(Instruction(waypoints, source=source), content,
                        truncated, None)


# -- dataset -----------------------------------------------------------------

@dataclass
class WindowDataset:
    audio: Array    # (N, 2048)
    frames: Array   # (N, 16, 16)
    labels: Array   # (N,) int token ids


def make_window_dataset(rng: np.random.Generator, n_windows: int,
                        augment: float = 0.5,
                        train_snr_db: float = TRAIN_SNR_DB) -> WindowDataset:
    """Labeled single-token windows with training-time corruption: every
    audio window carries the light noise floor; a fraction of frames get
    the light cutout."""
    labels = rng.integers(0, N_TOKENS, size=n_windows)
    audio = np.empty((n_windows, WINDOW))
    frames = np.empty((n_windows, FRAME, FRAME))
    t = np.arange(WINDOW) / SAMPLE_RATE
    for i, tok in enumerate(labels):
        f = TOKEN_FREQS[tok] * (1.0 + rng.uniform(-FREQ_JITTER, FREQ_JITTER))
        audio[i] = add_audio_noise(
            np.sin(2 * math.pi * f * t + rng.uniform(0, 2 * math.pi)),
            rng, train_snr_db)
        frames[i] = GLYPHS[tok]
        if rng.random() < augment:
            frames[i] = apply_cutout(frames[i], rng,
                                     rng.uniform(*TRAIN_CUTOUT))
    return WindowDataset(audio, frames, labels.astype(np.int64))


def save_dataset(directory, ds: WindowDataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {"audio": ds.audio, "frames": ds.frames}
    lines = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        (d / f"{name}.f64").write_bytes(arr.tobytes())
        lines.append(f"{name} {' '.join(str(s) for s in arr.shape)}")
    lines.append("labels " + " ".join(str(int(v)) for v in ds.labels))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> WindowDataset:
    d = Path(directory)
    arrays = {}
    labels = None
    for line in (d / "manifest.txt").read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "labels":
            labels = np.array([int(v) for v in parts[1:]], dtype=np.int64)
        else:
            shape = tuple(int(v) for v in parts[1:])
            raw = (d / f"{parts[0]}.f64").read_bytes()
            arrays[parts[0]] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    if labels is None or "audio" not in arrays or "frames" not in arrays:
        raise ValueError(f"incomplete dataset manifest under {d}")
    return WindowDataset(arrays["audio"].copy(), arrays["frames"].copy(), labels)


# -- training ----------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    pass


def train_encoders(dataset: WindowDataset, epochs: int,
                   rng: np.random.Generator, lr: float = 3e-3,
                   batch: int = 128, lambda_align: float = 0.1,
                   holdout: float = 0.1) -> tuple[ParamSet, dict]:
    """Joint cross-entropy over the three branches through the shared head,
    plus an audio/visual alignment penalty on matched windows.

    Returns (params, report) where report carries per-epoch losses and
    held-out clean accuracy.
    """
    from .params import AdamState, adam_step

    n = dataset.labels.size
    n_hold = max(1, int(n * holdout))
    order = rng.permutation(n)
    hold, train = order[:n_hold], order[n_hold:]
    params = init_encoder_params(rng)
    state = AdamState.init(params)
    sym_tokens = np.arange(N_TOKENS, dtype=np.int64)
    losses = []
    for epoch in range(epochs):
        perm = rng.permutation(train)
        epoch_loss = 0.0
        nb = 0
        for lo in range(0, perm.size, batch):
            idx = perm[lo:lo + batch]
            g = Graph()
            pids = {name: g.param(value) for name, value in params.items()}
            a_emb = _audio_branch_g(g, pids, dataset.audio[idx])
            v_emb = _visual_branch_g(g, pids, dataset.frames[idx])
            s_emb = _symbolic_branch_g(g, pids, sym_tokens)

            def head(emb):
                return g.add(g.matmul(emb, pids["head.w"]), pids["head.b"])

            labels = dataset.labels[idx]
            loss = g.add(g.cross_entropy(head(a_emb), labels),
                         g.cross_entropy(head(v_emb), labels))
            loss = g.add(loss, g.cross_entropy(head(s_emb), sym_tokens))
            if lambda_align > 0.0:
                align = g.mean(g.square(g.sub(a_emb, v_emb)))
                loss = g.add(loss, g.scale(align, lambda_align * LATENT_DIM))
            val = float(g.value(loss))
            if not math.isfinite(val):
                raise TrainingDiverged(
                    f"loss became {val} at epoch {epoch}, batch {nb}")
            grads = g.backward(loss)
            by_name = {name: grads[nid] for name, nid in pids.items()
                       if nid in grads}
            params = adam_step(params, by_name, lr=lr, state=state)
            epoch_loss += val
            nb += 1
        losses.append(epoch_loss / max(nb, 1))
    report = {
        "epoch_losses": losses,
        "holdout_audio_acc": _branch_accuracy(
            params, "audio", dataset.audio[hold], dataset.labels[hold]),
        "holdout_visual_acc": _branch_accuracy(
            params, "visual", dataset.frames[hold], dataset.labels[hold]),
    }
    return params, report


ENCODER_SEED = 42
ENCODER_WINDOWS = 8000
ENCODER_EPOCHS = 60


def train_default(seed: int = ENCODER_SEED,
                  n_windows: int = ENCODER_WINDOWS,
                  epochs: int = ENCODER_EPOCHS) -> tuple[ParamSet, dict]:
    """Reproduce the reference encoder checkpoint from its seed."""
    rng = np.random.default_rng(seed)
    ds = make_window_dataset(rng, n_windows)
    return train_encoders(ds, epochs=epochs, rng=rng)


def _branch_accuracy(params: ParamSet, branch: str, data: Array,
                     labels: Array) -> float:
    if branch == "audio":
        emb = _encode(_audio_branch_g, params, data)
    else:
        emb = _encode(_visual_branch_g, params, data)
    return float((classify(emb, params) == labels).mean())


def alignment_gap(params: ParamSet, ds: WindowDataset) -> float:
    """Mean squared audio/visual embedding distance over matched windows."""
    a = _encode(_audio_branch_g, params, ds.audio)
    v = _encode(_visual_branch_g, params, ds.frames)
    return float(np.mean(np.sum((a - v) ** 2, axis=1)))


# -- benchmark ---------------------------------------------------------------

def run_pipeline(params: ParamSet, clip: Optional[Array],
                 frames: Optional[Array]) -> tuple[DecodeResult, float]:
    """Encode + fuse + decode with wall-clock timing (the generation span)."""
    t0 = time.perf_counter()
    a_emb = encode_audio(clip, params) if clip is not None else None
    v_emb = encode_visual(frames, params) if frames is not None else None
    result = decode(fuse(a_emb, v_emb), params)
    return result, time.perf_counter() - t0


def benchmark(params: ParamSet, difficulty, input_type: str, noisy: bool,
              n: int = 100, seeds: int = 5, seed0: int = 0) -> dict:
    """Accuracy is exact full-sequence match; time covers
    encode+fuse+decode (symbolic: encode+decode).

    The clean and noisy conditions of a given (difficulty, input_type)
    share the same sampled instructions and renders per seed; corruption
    draws come from a separate stream, so the comparison is paired.
    """
    from .instruction import sample_task

    accs, times = [], []
    for s in range(seeds):
        rng = np.random.default_rng(seed0 + 1000 + s)
        noise_rng = np.random.default_rng(seed0 + 5000 + s)
        hits = 0
        elapsed = 0.0
        for _ in range(n):
            task = sample_task(rng, difficulty)
            truth = tokens_of(task.instruction)
            clip = frames = None
            if input_type in ("audio", "audiovisual"):
                clip = render_audio(truth, rng)
                if noisy:
                    clip = add_audio_noise(clip, noise_rng)
            if input_type in ("visual", "audiovisual"):
                frames = render_frames(truth)
                if noisy:
                    frames = corrupt_frames(frames, noise_rng)
            if input_type == "symbolic":
                t0 = time.perf_counter()
                emb = encode_symbolic(truth, params)
                result = decode(emb, params)
                dt = time.perf_counter() - t0
            else:
                result, dt = run_pipeline(params, clip, frames)
            elapsed += dt
            if result.tokens == truth:
                hits += 1
        accs.append(hits / n)
        times.append(elapsed / n)
    accs_a, times_a = np.array(accs), np.array(times)
    return {
        "acc_mean": float(accs_a.mean()), "acc_std": float(accs_a.std()),
        "time_mean": float(times_a.mean()), "time_std": float(times_a.std()),
    }
