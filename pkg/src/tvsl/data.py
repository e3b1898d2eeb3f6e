"""Mixtures, manifests and the synthetic tri-modal world.

Spectrograms are stored as ``log1p(power)`` so that a silent clip is all
zeros.  Mixing happens in linear power: ``log1p(sum(expm1(a_k)))``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import PatchEncoder, SyntheticTextEncoder, audio_encoder, visual_encoder
from .rawio import read_raw, write_raw
from .text import ClassVocabulary

TILE = 224

DEFAULT_CLASSES = (
    "dog barking", "violin", "church bell", "snake hissing", "acoustic guitar",
    "baby crying", "helicopter", "rooster crowing", "accordion", "lion roaring",
    "typewriter", "waterfall",
)


@dataclass
class MixtureSample:
    sample_id: str
    frame: np.ndarray   # (C, H, W) in [0, 1]
    audio: np.ndarray   # (M, F) log1p power
    classes: tuple[str, ...]
    boxes: dict = field(default_factory=dict)  # class name -> (x0, y0, x1, y1), half-open

    @property
    def K(self) -> int:
        return len(self.classes)

    def labels(self, vocab: ClassVocabulary) -> np.ndarray:
        return vocab.labels(self.classes)


def mix_audio(spectrograms) -> np.ndarray:
    power = sum(np.expm1(np.asarray(a, dtype=np.float64)) for a in spectrograms)
    return np.log1p(power)


def mix_k_sources(samples, sample_id: str | None = None) -> MixtureSample:
    """Concatenate frames left to right and sum audio power; labels are the union."""
    if len(samples) < 2:
        raise ValueError("need at least two samples to mix")
    seen: set[str] = set()
    for s in samples:
        if seen & set(s.classes):
            raise ValueError(f"mixture components share classes: {sorted(seen & set(s.classes))}")
        seen |= set(s.classes)
    heights = {s.frame.shape[1] for s in samples}
    if len(heights) != 1:
        raise ValueError(f"frames differ in height: {sorted(heights)}")
    shapes = {s.audio.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"spectrograms differ in shape: {sorted(shapes)}")
    frame = np.concatenate([s.frame for s in samples], axis=2)
    boxes, classes, offset = {}, [], 0
    for s in samples:
        for c in s.classes:
            x0, y0, x1, y1 = s.boxes[c]
            boxes[c] = (x0 + offset, y0, x1 + offset, y1)
        classes.extend(s.classes)
        offset += s.frame.shape[2]
    sid = sample_id or "+".join(s.sample_id for s in samples)
    return MixtureSample(sid, frame, mix_audio([s.audio for s in samples]), tuple(classes), boxes)


def synthesize_duet(s1: MixtureSample, s2: MixtureSample, sample_id: str | None = None) -> MixtureSample:
    return mix_k_sources([s1, s2], sample_id)


def zero_shot_split(class_names, seed: int) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Seeded 50/50 split of class names into (seen, unseen)."""
    names = list(class_names)
    order = np.random.default_rng(seed).permutation(len(names))
    half = len(names) // 2
    return tuple(names[i] for i in sorted(order[:half])), tuple(names[i] for i in sorted(order[half:]))


# --------------------------------------------------------------------------- world

@dataclass(frozen=True)
class SyntheticWorldSpec:
    class_names: tuple[str, ...] = DEFAULT_CLASSES[:8]
    dim: int = 64
    seed: int = 0
    noise: float = 0.1
    n_mels: int = 40
    n_frames: int = 48
    k_choices: tuple[int, ...] = (2,)
    n_train: int = 500
    n_test: int = 100
    train_classes: tuple[str, ...] | None = None
    test_classes: tuple[str, ...] | None = None
    modality_gap: float = 0.5
    clutter: float = 1.0
    gain_range: tuple[float, float] = (0.3, 3.0)  # audio event loudness, log-uniform
    blob_size: tuple[int, int] = (112, 112)  # object side in px, placed inside its quadrant
    event_rows: tuple[int, int] = (3, 6)  # event extent on the 10-row frequency grid
    event_cols: tuple[int, int] = (3, 6)  # and on the 6-column time grid
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("class_names", "k_choices", "train_classes", "test_classes", "gain_range", "blob_size",
                     "event_rows", "event_cols"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    @property
    def N(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorldSpec":
        return cls(**d)


def _orthonormal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


class SyntheticWorld:
    """Class prototypes, frozen encoders and a renderer for synthetic clips.

    Each class owns a visual texture and an audio timbre.  The encoders map
    a texture (or timbre) cell straight to that class's modality prototype,
    which sits near the class-name text embedding; background clutter maps to
    directions unrelated to any class.
    """

    SUB = 4  # sub-cells per patch side
    V_FEATS = 3 * SUB * SUB
    A_FEATS = SUB * SUB
    AUDIO_LEVEL = 3.0

    def __init__(self, spec: SyntheticWorldSpec):
        self.spec = spec
        N, D = spec.N, spec.dim
        if N + 1 > self.A_FEATS:
            raise ValueError(f"the synthetic world supports at most {self.A_FEATS - 1} classes")
        rng = np.random.default_rng([spec.seed, 0x5EED])
        self.text_encoder = SyntheticTextEncoder(D, seed=spec.seed)
        self.text_prototypes = _unit(np.stack([self.text_encoder.encode(n) for n in spec.class_names]))
        cos = self.text_prototypes @ self.text_prototypes.T
        np.fill_diagonal(cos, 0.0)
        if N > 1 and cos.max() >= 0.5:
            raise ValueError(f"class prototypes too similar (max cosine {cos.max():.3f})")
        gap = spec.modality_gap
        self.visual_prototypes = _unit(self.text_prototypes + gap * rng.normal(size=(N, D)) / np.sqrt(D))
        self.audio_prototypes = _unit(self.text_prototypes + gap * rng.normal(size=(N, D)) / np.sqrt(D))

        # visual textures: orthonormal directions around mid-grey
        qv = _orthonormal(rng, self.V_FEATS)
        self.v_class_dirs = qv[:, :N]
        self.v_clutter_dirs = qv[:, N:]
        self.v_alpha = 0.3 / np.abs(self.v_class_dirs).max()
        self.v_beta = 0.8
        rv = self._clutter_readout(rng, D, self.V_FEATS - N)
        wv = (self.visual_prototypes.T @ self.v_class_dirs.T / self.v_alpha
              + rv @ self.v_clutter_dirs.T / self.v_beta)
        self.visual_encoder = visual_encoder(wv, sub_pool=(self.SUB, self.SUB), stride=32, offset=0.5)

        # audio timbres: orthogonal to the loudness (all-ones) direction
        basis = np.column_stack([np.ones(self.A_FEATS), rng.normal(size=(self.A_FEATS, self.A_FEATS - 1))])
        qa, r = np.linalg.qr(basis)
        qa = qa * np.sign(np.diag(r))
        self.a_class_dirs = qa[:, 1:N + 1]
        self.a_clutter_dirs = qa[:, N + 1:]
        self.a_alpha = 1.5 / np.abs(self.a_class_dirs).max()
        ra = self._clutter_readout(rng, D, self.A_FEATS - N - 1)
        wa = (self.audio_prototypes.T @ self.a_class_dirs.T / self.a_alpha
              + ra @ self.a_clutter_dirs.T)
        self.audio_encoder = audio_encoder(wa, sub_pool=(self.SUB, self.SUB), grid=(10, 6),
                                           n_bins=spec.n_mels)

    @staticmethod
    def _clutter_readout(rng, D, k):
        if k == 0:
            return np.zeros((D, 0))
        q, _ = np.linalg.qr(rng.normal(size=(D, min(D, k))))
        if k > D:
            q = np.column_stack([q, rng.normal(size=(D, k - D)) / np.sqrt(D)])
        return q

    @property
    def vocabulary(self) -> ClassVocabulary:
        return ClassVocabulary(self.spec.class_names)

    def class_index(self, name: str) -> int:
        return self.spec.class_names.index(name)

    def encoder_hash(self) -> str:
        return "|".join([self.visual_encoder.state_hash(), self.audio_encoder.state_hash(),
                         self.text_encoder.state_hash()])

    # ------------------------------------------------------------------ render

    def _texture(self, feats: np.ndarray, h: int, w: int) -> np.ndarray:
        """Tile a (3*4*4) per-patch feature vector over an h×w pixel area."""
        cell = feats.reshape(3, self.SUB, self.SUB)
        big = np.repeat(np.repeat(cell, 8, axis=1), 8, axis=2)  # one 32×32 patch
        return np.tile(big, (1, h // 32, w // 32))

    def render_solo(self, name: str, rng: np.random.Generator, sample_id: str = "",
                    quadrant: int | None = None, noise: float | None = None) -> MixtureSample:
        spec = self.spec
        sigma = spec.noise if noise is None else noise
        c = self.class_index(name)
        n_patch = TILE // 32

        # background clutter, one random feature vector per patch
        z = rng.normal(size=(n_patch, n_patch, self.V_FEATS - spec.N))
        z *= spec.clutter / np.sqrt(max(1, self.V_FEATS - spec.N))
        feats = 0.5 + self.v_beta * z @ self.v_clutter_dirs.T
        frame = feats.reshape(n_patch, n_patch, 3, self.SUB, self.SUB)
        frame = np.repeat(np.repeat(frame, 8, axis=3), 8, axis=4)
        frame = frame.transpose(2, 0, 3, 1, 4).reshape(3, TILE, TILE)

        q = int(rng.integers(4)) if quadrant is None else quadrant
        half = TILE // 2
        lo, hi = spec.blob_size
        side = int(rng.integers(lo, hi + 1))
        y0 = (q // 2) * half + int(rng.integers(0, half - side + 1))
        x0 = (q % 2) * half + int(rng.integers(0, half - side + 1))
        style = 0.5 + self.v_alpha * self.v_class_dirs[:, c]
        tex = self._texture(style, TILE, TILE)
        frame[:, y0:y0 + side, x0:x0 + side] = tex[:, y0:y0 + side, x0:x0 + side]
        if sigma > 0:
            frame = frame + sigma * rng.normal(size=frame.shape)
        frame = np.clip(frame, 0.0, 1.0)

        audio = self._render_audio(c, rng, sigma)
        return MixtureSample(sample_id or name, frame, audio, (name,),
                             {name: (x0, y0, x0 + side, y0 + side)})

    def _render_audio(self, c: int, rng: np.random.Generator, sigma: float) -> np.ndarray:
        spec = self.spec
        rows, cols = 10, 6
        timbre = self.AUDIO_LEVEL + self.a_alpha * self.a_class_dirs[:, c]
        cell = np.expm1(timbre.reshape(self.SUB, self.SUB))
        # event rectangle on the 10×6 cell grid
        r_len = int(rng.integers(spec.event_rows[0], spec.event_rows[1] + 1))
        c_len = int(rng.integers(spec.event_cols[0], spec.event_cols[1] + 1))
        r0 = int(rng.integers(0, rows - r_len + 1))
        c0 = int(rng.integers(0, cols - c_len + 1))
        lo, hi = spec.gain_range
        gain = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        power = np.zeros((rows * self.SUB, cols * self.SUB))
        tiled = np.tile(cell, (rows, cols))
        power[r0 * self.SUB:(r0 + r_len) * self.SUB, c0 * self.SUB:(c0 + c_len) * self.SUB] = \
            gain * tiled[r0 * self.SUB:(r0 + r_len) * self.SUB, c0 * self.SUB:(c0 + c_len) * self.SUB]
        power = power + rng.exponential(0.1, size=power.shape)
        spec_small = np.log1p(power)
        # stretch onto the configured mel/frame resolution
        ry = np.repeat(np.arange(rows * self.SUB), int(np.ceil(spec.n_mels / (rows * self.SUB))))
        rx = np.repeat(np.arange(cols * self.SUB), int(np.ceil(spec.n_frames / (cols * self.SUB))))
        ry = ry[np.linspace(0, ry.size - 1, spec.n_mels).round().astype(int)]
        rx = rx[np.linspace(0, rx.size - 1, spec.n_frames).round().astype(int)]
        out = spec_small[np.ix_(ry, rx)]
        if sigma > 0:
            out = out + sigma * rng.normal(size=out.shape)
        return np.maximum(out, 0.0)

    def render_mixture(self, names, rng: np.random.Generator, sample_id: str = "") -> MixtureSample:
        solos = [self.render_solo(n, rng, f"{sample_id}/{i}") for i, n in enumerate(names)]
        if len(solos) == 1:
            s = solos[0]
            return replace(s, sample_id=sample_id or s.sample_id)
        return mix_k_sources(solos, sample_id=sample_id)


def balanced_class_draws(names, counts, rng) -> list[tuple[str, ...]]:
    """Draw class tuples of the given sizes from a shuffled round-robin stream."""
    stream: list[str] = []
    out = []
    for k in counts:
        if k > len(names):
            raise ValueError(f"cannot draw {k} distinct classes from {len(names)}")
        chosen: list[str] = []
        while len(chosen) < k:
            if not stream:
                stream = [names[i] for i in rng.permutation(len(names))]
            for j, name in enumerate(stream):
                if name not in chosen:
                    chosen.append(stream.pop(j))
                    break
            else:
                stream = []
        out.append(tuple(chosen))
    return out


# --------------------------------------------------------------------------- manifests

@dataclass
class Manifest:
    records: list
    header: dict = field(default_factory=dict)
    root: Path = Path(".")

    def ids(self) -> list[str]:
        return [r["id"] for r in self.records]

    def dumps(self) -> str:
        lines = [json.dumps({"manifest_header": self.header}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        header, records = {}, []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "manifest_header" in rec:
                header = rec["manifest_header"]
            else:
                records.append(rec)
        root = Path(os.environ.get("TVSL_DATA_ROOT", path.parent))
        return cls(records, header, root)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def load_sample(self, record: dict) -> MixtureSample:
        with Image.open(self.resolve(record["frame"])) as im:
            frame = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        audio = read_raw(self.resolve(record["audio"]))[0].astype(np.float64)
        boxes = {k: tuple(v) for k, v in record.get("boxes", {}).items()}
        return MixtureSample(record["id"], frame, audio, tuple(record["classes"]), boxes)

    def samples(self) -> list[MixtureSample]:
        return [self.load_sample(r) for r in self.records]

    def check_vocabulary(self, vocab: ClassVocabulary) -> None:
        for r in self.records:
            for c in r["classes"]:
                vocab.index(c)


def check_split_hygiene(train: Manifest, test: Manifest) -> None:
    overlap = set(train.ids()) & set(test.ids())
    if overlap:
        raise ValueError(f"{len(overlap)} sample ids appear in both splits, e.g. {sorted(overlap)[:3]}")


def save_sample(sample: MixtureSample, root: Path, split: str) -> dict:
    safe = sample.sample_id.replace("/", "_")
    frame_rel = f"frames/{safe}.png"
    audio_rel = f"audio/{safe}.f32"
    img = np.round(np.clip(sample.frame, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(img, mode="RGB").save(root / frame_rel)
    write_raw(root / audio_rel, sample.audio)
    return {
        "id": sample.sample_id, "frame": frame_rel, "audio": audio_rel,
        "classes": list(sample.classes),
        "boxes": {c: [int(v) for v in b] for c, b in sample.boxes.items()},
        "split": split,
    }


def generate_synthetic_world(spec: SyntheticWorldSpec, root) -> tuple[Manifest, Manifest]:
    """Render train and test splits under ``root`` and write their manifests.

    Output is a pure function of ``spec``: the same spec gives byte-identical
    manifests and files.
    """
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    world = SyntheticWorld(spec)
    header = {"world": spec.to_dict(), **spec.header}
    manifests = []
    for code, (split, n, allowed) in enumerate((
            ("train", spec.n_train, spec.train_classes or spec.class_names),
            ("test", spec.n_test, spec.test_classes or spec.class_names))):
        rng = np.random.default_rng([spec.seed, 1 + code])
        ks = rng.choice(np.asarray(spec.k_choices), size=n)
        draws = balanced_class_draws(list(allowed), [int(k) for k in ks], rng)
        records = []
        for i, names in enumerate(draws):
            sample = world.render_mixture(names, rng, sample_id=f"{split}-{i:05d}")
            records.append(save_sample(sample, root, split))
        m = Manifest(records, {**header, "split": split}, root)
        m.save(root / f"{split}.jsonl")
        manifests.append(m)
    world.vocabulary.to_file(root / "vocab.txt")
    for split, allowed in (("train", spec.train_classes), ("test", spec.test_classes)):
        if allowed:
            ClassVocabulary(allowed).to_file(root / f"vocab_{split}.txt")
    (root / "world.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    check_split_hygiene(*manifests)
    return manifests[0], manifests[1]


def load_world(root) -> SyntheticWorld:
    spec = json.loads((Path(root) / "world.json").read_text())
    return SyntheticWorld(SyntheticWorldSpec.from_dict(spec))
