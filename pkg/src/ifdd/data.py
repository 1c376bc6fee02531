"""Synthetic planted-dynamics video datasets.

Each clip is a smooth periodic background texture (optionally translated by
a constant sub-pixel velocity, the "global drift" nuisance), plus pixel
noise, plus a class motif: for D consecutive frames a small square patch
drifts linearly while its intensity follows a class-specific sinusoid. The
sampled waveforms are zero-mean and energy-normalized per class, so frame
statistics alone carry no class evidence; only the temporal pattern does.

Clip file format ("IFDDCLIP"): magic, u16 version, u32 extents
T0, H0, W0, Ch, then little-endian float32 values in row-major order.
The dataset manifest is a JSON document (schema in the README) carrying the
generator config echo, per-clip entries, fold assignments, the recorded
motif-oracle accuracy, and the class-statistics check.
"""

import json
import struct
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

CLIP_MAGIC = b"IFDDCLIP"
CLIP_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
WAVEFORM_PHASE = np.pi / 4  # keeps every class visible at integer sampling


class DatasetError(Exception):
    pass


GEN_DEFAULTS = {
    "classes": 7,
    "clips": 840,
    "t0": 16,
    "h0": 32,
    "w0": 32,
    "event_len": 6,
    "noise_sigma": 0.02,
    "drift_speed": [0.0, 0.0],  # [min, max] whole-frame px/frame
    "patch": 11,
    # waveform peaks reach ~1.6*amp; texture + amp + noise tails must stay
    # inside [0, 1] or clipping leaks class-dependent statistics
    "amp": 0.18,
    "patch_travel": 2.5,  # total patch drift over the event window, px
    # patch placement: centered with uniform jitter, like a face in a
    # detection crop; full-frame uniform placement makes the position
    # space too sparse to generalize from desk-scale clip counts
    "patch_jitter": 2.0,
    "texture_grid": 4,
    "texture_contrast": 0.08,
    # backgrounds come from a shared pool reused across classes (like
    # identities recurring across emotion labels): texture memorization then
    # carries no class evidence; 0 means a unique texture per clip
    "texture_pool": 8,
    "folds": 5,
}

GEN_PRESETS = {
    "easy": {"noise_sigma": 0.02, "drift_speed": [0.0, 0.0], "event_len": 6},
    # the planted amplitude rises with the noise floor so the motif stays
    # recoverable (the nuisance levels themselves define the preset)
    "hard": {"noise_sigma": 0.1, "drift_speed": [0.5, 1.0], "event_len": 4, "amp": 0.32},
}


def gen_config(preset="easy", **overrides):
    cfg = dict(GEN_DEFAULTS)
    if preset is not None:
        if preset not in GEN_PRESETS:
            raise DatasetError(f"unknown preset {preset!r}")
        cfg.update(GEN_PRESETS[preset])
        cfg["preset"] = preset
    for key, val in overrides.items():
        if key not in cfg:
            raise DatasetError(f"unknown generator option {key!r}")
        cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# clip files
# ---------------------------------------------------------------------------

def write_clip(path, frames):
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise DatasetError(f"clip must be 4-d (T, H, W, Ch), got shape {frames.shape}")
    header = CLIP_MAGIC + struct.pack("<H4I", CLIP_VERSION, *frames.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())


def load_clip(path):
    """Read one clip file back; exact round-trip of the written values."""
    path = Path(path)
    raw = path.read_bytes()
    head_len = len(CLIP_MAGIC) + 2 + 16
    if len(raw) < head_len:
        raise DatasetError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[: len(CLIP_MAGIC)] != CLIP_MAGIC:
        raise DatasetError(f"{path}: bad magic {raw[:8]!r}")
    version, t, h, w, ch = struct.unpack_from("<H4I", raw, len(CLIP_MAGIC))
    if version != CLIP_VERSION:
        raise DatasetError(f"{path}: unsupported clip format version {version}")
    expect = head_len + t * h * w * ch * 4
    if len(raw) != expect:
        raise DatasetError(f"{path}: truncated data ({len(raw)} bytes, expected {expect})")
    frames = np.frombuffer(raw, dtype="<f4", offset=head_len).reshape(t, h, w, ch)
    return frames.copy()


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def make_waveforms(n_classes, d, phase=WAVEFORM_PHASE):
    """(n_classes, d) zero-mean waveforms with equal energy (RMS 1).

    Class c samples a sinusoid of frequency (c+1)/(2d) cycles per frame; the
    phase offset keeps the ladder distinguishable at integer sampling (at
    zero phase the c+1 = d class would vanish identically).
    """
    table = np.zeros((n_classes, d))
    k = np.arange(d)
    for c in range(n_classes):
        f = (c + 1) / (2.0 * d)
        w = np.sin(2.0 * np.pi * f * k + phase)
        w = w - w.mean()
        norm = np.sqrt((w * w).sum())
        if norm < 1e-9:
            raise DatasetError(f"degenerate waveform for class {c}")
        table[c] = w / norm * np.sqrt(d)
    return table


def _upsample_periodic(grid, h, w):
    """Bilinear upsample of a coarse (g, g, ch) grid onto (h, w, ch), wrapping."""
    g = grid.shape[0]
    ys = np.arange(h) * (g / h)
    xs = np.arange(w) * (g / w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    y1, x1 = (y0 + 1) % g, (x0 + 1) % g
    return (
        (1 - fy) * (1 - fx) * grid[np.ix_(y0, x0)]
        + (1 - fy) * fx * grid[np.ix_(y0, x1)]
        + fy * (1 - fx) * grid[np.ix_(y1, x0)]
        + fy * fx * grid[np.ix_(y1, x1)]
    )


def _shift_periodic(img, dy, dx):
    """Sub-pixel translation with periodic boundary (bilinear)."""
    y0, x0 = int(np.floor(dy)), int(np.floor(dx))
    fy, fx = dy - y0, dx - x0
    a = np.roll(img, (-y0, -x0), axis=(0, 1))
    b = np.roll(img, (-y0, -(x0 + 1)), axis=(0, 1))
    c = np.roll(img, (-(y0 + 1), -x0), axis=(0, 1))
    d = np.roll(img, (-(y0 + 1), -(x0 + 1)), axis=(0, 1))
    return (1 - fy) * (1 - fx) * a + (1 - fy) * fx * b + fy * (1 - fx) * c + fy * fx * d


def _box_mask(h, w, py, px, p):
    """Soft box [py, py+p) x [px, px+p) with fractional edges, clipped."""
    rows = np.arange(h)
    cols = np.arange(w)
    cov_y = np.clip(np.minimum(rows + 1.0, py + p) - np.maximum(rows, py), 0.0, 1.0)
    cov_x = np.clip(np.minimum(cols + 1.0, px + p) - np.maximum(cols, px), 0.0, 1.0)
    return np.outer(cov_y, cov_x)


def texture_pool(master_seed, cfg):
    """Shared background grids, or None when every clip draws its own."""
    n = int(cfg.get("texture_pool", 0))
    if n == 0:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), 0xBA5E]))
    g = cfg["texture_grid"]
    lo, hi = 0.5 - cfg["texture_contrast"], 0.5 + cfg["texture_contrast"]
    return rng.uniform(lo, hi, size=(n, g, g, 3))


def plan_scene(seed, label, cfg, pool=None):
    """Draw every random choice for one clip up front (deterministic replay)."""
    rng = np.random.default_rng(seed)
    t0c, h, w = cfg["t0"], cfg["h0"], cfg["w0"]
    d = cfg["event_len"]
    p = cfg["patch"]
    g = cfg["texture_grid"]

    if pool is not None:
        grid = pool[rng.integers(0, len(pool))]
    else:
        grid = rng.uniform(0.5 - cfg["texture_contrast"], 0.5 + cfg["texture_contrast"], size=(g, g, 3))
    speed = rng.uniform(cfg["drift_speed"][0], cfg["drift_speed"][1])
    angle = rng.uniform(0.0, 2.0 * np.pi)
    drift_v = np.array([speed * np.sin(angle), speed * np.cos(angle)])

    event_t0 = int(rng.integers(0, t0c - d + 1))
    travel_angle = rng.uniform(0.0, 2.0 * np.pi)
    travel = cfg["patch_travel"] * np.array([np.sin(travel_angle), np.cos(travel_angle)])
    jitter = cfg["patch_jitter"]
    center = np.array([(h - p) / 2.0, (w - p) / 2.0])
    start = center + rng.uniform(-jitter, jitter, size=2) - 0.5 * travel
    margin = 1.0
    lo = np.maximum(margin, margin - np.minimum(travel, 0.0))
    hi = np.array([h - p - margin, w - p - margin]) - np.maximum(travel, 0.0)
    start = np.clip(start, lo, hi)
    steps = np.linspace(0.0, 1.0, d)[:, None]
    positions = start[None, :] + steps * travel[None, :]

    noise = rng.normal(0.0, cfg["noise_sigma"], size=(t0c, h, w, 3))
    return {
        "label": int(label),
        "grid": grid,
        "drift_v": drift_v,
        "event_t0": event_t0,
        "positions": positions,
        "noise": noise,
    }


def assemble_clip(scene, cfg, waveforms, with_motif=True, with_noise=True):
    """Render a planned scene into (T0, H0, W0, 3) float32 frames in [0, 1]."""
    t0c, h, w = cfg["t0"], cfg["h0"], cfg["w0"]
    p = cfg["patch"]
    tex = _upsample_periodic(scene["grid"], h, w)
    frames = np.empty((t0c, h, w, 3))
    vy, vx = scene["drift_v"]
    for t in range(t0c):
        if vy == 0.0 and vx == 0.0:
            frames[t] = tex
        else:
            frames[t] = _shift_periodic(tex, vy * t, vx * t)
    if with_motif:
        wv = waveforms[scene["label"]]
        for k, (py, px) in enumerate(scene["positions"]):
            mask = _box_mask(h, w, py, px, p)
            frames[scene["event_t0"] + k] += cfg["amp"] * wv[k] * mask[:, :, None]
    if with_noise:
        frames += scene["noise"]
    return np.clip(frames, 0.0, 1.0).astype("<f4")


# ---------------------------------------------------------------------------
# oracle and statistics checks
# ---------------------------------------------------------------------------

def motif_oracle_predict(frames, scene, cfg, waveforms):
    """Nearest-centroid classification on the ground-truth motif window.

    Subtracts the noiseless motif-free rendering, projects the residual of
    each event frame onto that frame's patch footprint, and matches the
    recovered waveform against the class templates.
    """
    bg = assemble_clip(scene, cfg, waveforms, with_motif=False, with_noise=False)
    d = cfg["event_len"]
    p = cfg["patch"]
    h, w = cfg["h0"], cfg["w0"]
    m = np.zeros(d)
    for k, (py, px) in enumerate(scene["positions"]):
        mask = _box_mask(h, w, py, px, p)
        resid = (frames[scene["event_t0"] + k].astype(np.float64) - bg[scene["event_t0"] + k]).mean(axis=2)
        m[k] = (resid * mask).sum() / (mask * mask).sum()
    m = m - m.mean()
    norm = np.linalg.norm(m)
    if norm < 1e-12:
        return 0
    m /= norm
    templates = waveforms / np.linalg.norm(waveforms, axis=1, keepdims=True)
    return int(np.argmax(templates @ m))


def class_stats_check(clip_means, clip_vars, labels, n_classes):
    """Pairwise two-sample KS tests of per-clip mean/variance across classes."""
    min_p = 1.0
    for a in range(n_classes):
        for b in range(a + 1, n_classes):
            ma = clip_means[labels == a]
            mb = clip_means[labels == b]
            va = clip_vars[labels == a]
            vb = clip_vars[labels == b]
            min_p = min(min_p, ks_2samp(ma, mb).pvalue, ks_2samp(va, vb).pvalue)
    return float(min_p)


# ---------------------------------------------------------------------------
# dataset generation and loading
# ---------------------------------------------------------------------------

def clip_seed(master_seed, index):
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_dataset(cfg, master_seed, out_dir):
    """Write clip files plus manifest; byte-identical for identical inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(cfg["clips"])
    n_classes = int(cfg["classes"])
    waveforms = make_waveforms(n_classes, cfg["event_len"])
    pool = texture_pool(master_seed, cfg)

    entries = []
    labels = np.array([i % n_classes for i in range(n)])
    oracle_hits = np.zeros(n_classes)
    oracle_counts = np.zeros(n_classes)
    clip_means = np.zeros(n)
    clip_vars = np.zeros(n)
    for i in range(n):
        seed = clip_seed(master_seed, i)
        scene = plan_scene(seed, labels[i], cfg, pool)
        frames = assemble_clip(scene, cfg, waveforms)
        name = f"clip_{i:05d}.ifdd"
        write_clip(out / name, frames)
        pred = motif_oracle_predict(frames, scene, cfg, waveforms)
        oracle_counts[labels[i]] += 1
        oracle_hits[labels[i]] += pred == labels[i]
        clip_means[i] = float(frames.mean())
        clip_vars[i] = float(frames.var())
        entries.append({
            "file": name,
            "label": int(labels[i]),
            "seed": seed,
            "event_t0": scene["event_t0"],
        })

    folds = kfold_split(labels, int(cfg["folds"]), int(master_seed))
    assignment = np.zeros(n, dtype=int)
    for j, (_, test_idx) in enumerate(folds):
        assignment[test_idx] = j

    manifest = {
        "format": "ifdd-dataset-manifest",
        "version": MANIFEST_VERSION,
        "classes": n_classes,
        "clips": n,
        "master_seed": int(master_seed),
        "config": {k: v for k, v in sorted(cfg.items())},
        "entries": entries,
        "folds": {"k": int(cfg["folds"]), "seed": int(master_seed), "assignment": assignment.tolist()},
        "oracle": {
            "accuracy": float(oracle_hits.sum() / n),
            "per_class": (oracle_hits / np.maximum(oracle_counts, 1)).tolist(),
        },
        "stats_check": {
            "test": "ks_2samp",
            "min_pairwise_p": class_stats_check(clip_means, clip_vars, labels, n_classes),
        },
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir):
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "ifdd-dataset-manifest":
        raise DatasetError(f"{path}: not a dataset manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {manifest.get('version')}")
    return manifest


def load_dataset(dataset_dir, manifest=None):
    """Load every clip into memory; validates shapes against the manifest."""
    root = Path(dataset_dir)
    if manifest is None:
        manifest = load_manifest(root)
    cfg = manifest["config"]
    expect = (cfg["t0"], cfg["h0"], cfg["w0"], 3)
    clips = []
    labels = []
    for entry in manifest["entries"]:
        frames = load_clip(root / entry["file"])
        if frames.shape != expect:
            raise DatasetError(
                f"{entry['file']}: clip shape {frames.shape} disagrees with "
                f"manifest shape {expect}"
            )
        clips.append(frames)
        labels.append(entry["label"])
    return manifest, clips, np.array(labels, dtype=int)


# ---------------------------------------------------------------------------
# fold machinery
# ---------------------------------------------------------------------------

def kfold_split(labels, k, seed):
    """Stratified k folds: disjoint, exhaustive, per-class counts within 1."""
    labels = np.asarray(labels)
    if k < 2:
        raise DatasetError("k must be >= 2")
    rng = np.random.default_rng(seed)
    n = len(labels)
    fold_of = np.zeros(n, dtype=int)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise DatasetError(f"class {c} has {len(idx)} clips, fewer than k={k}")
        perm = rng.permutation(idx)
        fold_of[perm] = np.arange(len(perm)) % k
    out = []
    for j in range(k):
        test = np.flatnonzero(fold_of == j)
        train = np.flatnonzero(fold_of != j)
        out.append((train, test))
    return out


def train_val_split(labels, train_idx, seed):
    """Deterministic stratified 4:1 split of a training index set."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed + 0x5F5E1)
    fit, val = [], []
    for c in np.unique(labels[train_idx]):
        idx = train_idx[labels[train_idx] == c]
        perm = rng.permutation(idx)
        n_val = max(1, len(idx) // 5)
        val.extend(perm[:n_val])
        fit.extend(perm[n_val:])
    return np.sort(np.array(fit, dtype=int)), np.sort(np.array(val, dtype=int))
