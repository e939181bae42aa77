"""Deterministic synthetic datasets for tagging, toy detection and the
subset-sum CAPTCHA, plus an IDX (MNIST) reader.

Every instance is generated from its own RNG seeded by ``(seed, id)``, so an
instance does not depend on generation order.
"""
from __future__ import annotations

import gzip
import itertools
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry
from .setloss import GroundTruthSet

NOISE_MAX = 0.2
DETECT_CANVAS = 32
TAG_CANVAS = 32
SCENE_W, SCENE_H = 96, 24
QUERY_SIZE = 16

# 5x7 bitmap digits, one string per row
FONT_5X7 = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}


class GenerationError(RuntimeError):
    pass


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Instance:
    """One example.  ``boxes`` are pixel-space corners; :attr:`gt` normalises them."""

    id: int
    input: np.ndarray
    w: int
    h: int
    classes: np.ndarray
    boxes: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.classes)

    @property
    def gt(self) -> GroundTruthSet:
        if self.boxes is None:
            return GroundTruthSet(self.classes)
        return GroundTruthSet(self.classes, geometry.normalize_boxes(self.boxes, self.w, self.h))

    @property
    def task(self) -> str:
        if self.boxes is None:
            return "tagging"
        return "captcha" if "query" in self.meta else "detect"


def instance_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(idx)])


def _add_noise(canvas: np.ndarray, rng) -> np.ndarray:
    return np.clip(canvas + rng.uniform(0.0, NOISE_MAX, size=canvas.shape), 0.0, 1.0)


def glyph_bitmap(digit: int) -> np.ndarray:
    return np.array([[c == "1" for c in row] for row in FONT_5X7[digit]], dtype=float)


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    rows = (np.arange(height) * img.shape[0] / height).astype(int)
    cols = (np.arange(width) * img.shape[1] / width).astype(int)
    return img[rows][:, cols]


# ---------------------------------------------------------------- tagging

def _label_patterns(num_labels: int) -> np.ndarray:
    # fixed per-label 6x6 textures; independent of the dataset seed
    rng = np.random.default_rng(20240917)
    pats = rng.random((16, 6, 6)) < 0.5
    pats[:, 0, 0] = True
    return pats[:num_labels].astype(float)


def gen_multilabel(n: int, num_labels: int = 10, seed: int = 0, max_visible: int = 5) -> list[Instance]:
    """Label ``l`` owns cell ``l`` of a 4x4 grid of 8x8 cells; a random subset
    of 1..max_visible labels is drawn."""
    if not 1 <= num_labels <= 16:
        raise ValueError("num_labels must be in 1..16")
    pats = _label_patterns(num_labels)
    out = []
    for i in range(n):
        rng = instance_rng(seed, i)
        k = int(rng.integers(1, min(max_visible, num_labels) + 1))
        labels = np.sort(rng.choice(num_labels, size=k, replace=False))
        canvas = np.zeros((TAG_CANVAS, TAG_CANVAS))
        for lab in labels:
            r0, c0 = 8 * (lab // 4), 8 * (lab % 4)
            dy, dx = rng.integers(0, 3, size=2)
            level = rng.uniform(0.6, 1.0)
            canvas[r0 + dy : r0 + dy + 6, c0 + dx : c0 + dx + 6] = pats[lab] * level
        canvas = _add_noise(canvas, rng)
        out.append(Instance(i, canvas.ravel(), TAG_CANVAS, TAG_CANVAS, labels.astype(np.int64)))
    return out


def label_region(label: int) -> tuple[slice, slice]:
    r0, c0 = 8 * (label // 4), 8 * (label % 4)
    return slice(r0, r0 + 8), slice(c0, c0 + 8)


# -------------------------------------------------------------- detection

def _draw_rect(canvas, box, fill, edge):
    x1, y1, x2, y2 = (int(v) for v in box)
    canvas[y1:y2, x1:x2] += fill
    canvas[y1, x1:x2] += edge
    canvas[y2 - 1, x1:x2] += edge
    canvas[y1:y2, x1] += edge
    canvas[y1:y2, x2 - 1] += edge


def _place_boxes(rng, count, canvas, size_range, overlap_level, tries=500):
    lo, hi = size_range
    boxes = []
    while len(boxes) < count:
        for _ in range(tries):
            w, h = rng.integers(lo, hi + 1, size=2)
            x, y = rng.integers(0, canvas - w + 1), rng.integers(0, canvas - h + 1)
            cand = np.array([x, y, x + w, y + h], dtype=float)
            if boxes:
                ious = geometry.pairwise_iou(np.array(boxes), cand)[:, 0]
                if overlap_level <= 0:
                    if np.any(ious > 0):
                        continue
                elif np.any(ious > overlap_level):
                    continue
            boxes.append(cand)
            break
        else:
            boxes = []  # dead end, start the layout over
    return np.array(boxes, dtype=float).reshape(-1, 4)


def gen_toy_detection(
    n: int,
    max_objects: int = 5,
    overlap_level: float = 0.4,
    seed: int = 0,
    num_classes: int = 1,
    size_range=(6, 14),
    count: Optional[int] = None,
) -> list[Instance]:
    """Rectangles on a 32x32 canvas with pairwise IoU at most ``overlap_level``.

    Cardinality is uniform on ``0..max_objects`` unless ``count`` fixes it.
    With ``num_classes > 1`` each object gets a distinct class (so at most
    ``num_classes`` objects) and the fill brightness encodes the class.
    Boxes are stored in random order.
    """
    if num_classes > 1 and (count or max_objects) > num_classes:
        raise ValueError("multi-class scenes use each class at most once")
    out = []
    for i in range(n):
        rng = instance_rng(seed, i)
        k = int(count) if count is not None else int(rng.integers(0, max_objects + 1))
        boxes = _place_boxes(rng, k, DETECT_CANVAS, size_range, overlap_level)
        if num_classes > 1:
            classes = rng.permutation(num_classes)[:k]
        else:
            classes = np.zeros(k, dtype=np.int64)
        canvas = np.zeros((DETECT_CANVAS, DETECT_CANVAS))
        for box, c in zip(boxes, classes):
            fill = 0.15 + 0.5 * c / max(num_classes - 1, 1) if num_classes > 1 else 0.3
            _draw_rect(canvas, box, fill, 0.5)
        canvas = _add_noise(np.clip(canvas, 0.0, 1.0), rng)
        order = rng.permutation(k)
        out.append(
            Instance(i, canvas.ravel(), DETECT_CANVAS, DETECT_CANVAS, classes[order].astype(np.int64), boxes[order])
        )
    return out


# ---------------------------------------------------------------- captcha

def count_solutions(digits, query: int) -> int:
    """Number of index subsets (including the empty one) summing to ``query``."""
    digits = list(digits)
    total = 0
    for r in range(len(digits) + 1):
        for combo in itertools.combinations(digits, r):
            if sum(combo) == query:
                total += 1
    return total


def solution_subset(digits, query: int) -> Optional[tuple[int, ...]]:
    """Indices of the first subset (by size, then lexicographic) summing to ``query``."""
    for r in range(len(digits) + 1):
        for combo in itertools.combinations(range(len(digits)), r):
            if sum(digits[j] for j in combo) == query:
                return combo
    return None


def verify_unique_solution(instance) -> bool:
    """True iff exactly one subset of the scene digits sums to the query."""
    meta = instance.meta if isinstance(instance, Instance) else instance
    return count_solutions(meta["digits"], meta["query"]) == 1


def _render_digit(digit, height, width, rng, glyphs):
    if glyphs is not None and glyphs.get(digit):
        pool = glyphs[digit]
        img = pool[int(rng.integers(len(pool)))]
        return resize_nearest(img, height, width)
    return resize_nearest(glyph_bitmap(digit), height, width) * rng.uniform(0.7, 1.0)


def gen_captcha(n: int, scene_digits: int = 4, seed: int = 0, glyphs: Optional[dict] = None, max_tries: int = 10_000) -> list[Instance]:
    """Subset-sum CAPTCHA scenes.

    The query digit is drawn on its own 16x16 canvas, appended after the
    96x24 scene in the input vector.  Scene digits (1..9, 2..scene_digits of
    them) are resampled until exactly one subset sums to the query; the ground
    truth is the boxes of that subset (empty when the query is 0).
    ``glyphs`` optionally maps digit -> list of grayscale images (e.g. from
    :func:`load_idx`) to replace the built-in font.
    """
    if not 1 <= scene_digits <= 6:
        raise ValueError("scene_digits must be in 1..6")
    out = []
    for i in range(n):
        rng = instance_rng(seed, i)
        query = int(rng.integers(0, 10))
        for _ in range(max_tries):
            k = int(rng.integers(min(2, scene_digits), scene_digits + 1))
            digits = [int(d) for d in rng.integers(1, 10, size=k)]
            if count_solutions(digits, query) == 1:
                break
        else:
            raise GenerationError(f"no unique-solution scene for query {query} after {max_tries} tries")
        scales = rng.integers(2, 4, size=k)
        sizes = [(7 * s, 5 * s) for s in scales]  # (h, w)
        boxes = _place_digit_boxes(rng, sizes)
        scene = np.zeros((SCENE_H, SCENE_W))
        for d, (x1, y1, x2, y2) in zip(digits, boxes.astype(int)):
            scene[y1:y2, x1:x2] = np.maximum(scene[y1:y2, x1:x2], _render_digit(d, y2 - y1, x2 - x1, rng, glyphs))
        query_img = np.zeros((QUERY_SIZE, QUERY_SIZE))
        oy, ox = rng.integers(0, QUERY_SIZE - 14 + 1), rng.integers(0, QUERY_SIZE - 10 + 1)
        query_img[oy : oy + 14, ox : ox + 10] = _render_digit(query, 14, 10, rng, glyphs)
        scene = _add_noise(scene, rng)
        query_img = _add_noise(query_img, rng)
        sol = list(solution_subset(digits, query))
        meta = {"query": query, "digits": digits, "digit_boxes": boxes.tolist()}
        out.append(
            Instance(
                i,
                np.concatenate([scene.ravel(), query_img.ravel()]),
                SCENE_W,
                SCENE_H,
                np.zeros(len(sol), dtype=np.int64),
                boxes[sol].reshape(-1, 4),
                meta,
            )
        )
    return out


def _place_digit_boxes(rng, sizes, tries=1000):
    while True:
        boxes = []
        for h, w in sizes:
            for _ in range(tries):
                x, y = int(rng.integers(0, SCENE_W - w + 1)), int(rng.integers(0, SCENE_H - h + 1))
                cand = np.array([x, y, x + w, y + h], dtype=float)
                # keep a one-pixel gap between digits
                if all(cand[0] >= b[2] + 1 or b[0] >= cand[2] + 1 for b in boxes):
                    boxes.append(cand)
                    break
            else:
                break
        if len(boxes) == len(sizes):
            return np.array(boxes)


def query_mask(width: int = SCENE_W, height: int = SCENE_H) -> np.ndarray:
    """Boolean mask of the query-channel entries in a CAPTCHA input vector."""
    mask = np.zeros(width * height + QUERY_SIZE * QUERY_SIZE, dtype=bool)
    mask[width * height :] = True
    return mask


# -------------------------------------------------------------------- IDX

_IDX_TYPES = {0x08: np.uint8}


def load_idx(path):
    """Read an IDX file (optionally gzipped).

    Image files (magic 0x00000803) come back as float arrays scaled to [0, 1];
    label files (0x00000801) as integer arrays.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    return parse_idx(data)


def parse_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError("truncated magic number", len(data))
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    magic = int.from_bytes(data[:4], "big")
    if zero != 0 or dtype_code not in _IDX_TYPES or magic not in (0x00000801, 0x00000803):
        raise IdxFormatError(f"bad magic number 0x{magic:08x}", 0)
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxFormatError("truncated dimension header", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    count = int(np.prod(dims)) if dims else 0
    if len(data) < header_end + count:
        raise IdxFormatError(f"expected {count} data bytes, found {len(data) - header_end}", len(data))
    if len(data) > header_end + count:
        raise IdxFormatError("trailing bytes after data", header_end + count)
    arr = np.frombuffer(data, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    if magic == 0x00000803:
        return arr.astype(float) / 255.0
    return arr.astype(np.int64)


def encode_idx(arr) -> bytes:
    """Serialise a uint8 array (1-D labels or 3-D images) as IDX bytes."""
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise ValueError("IDX writer only supports uint8 data")
    magic = 0x00000801 if a.ndim == 1 else 0x00000803
    header = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape)
    return header + a.tobytes()


def glyphs_from_idx(images: np.ndarray, labels: np.ndarray) -> dict:
    glyphs: dict = {}
    for img, lab in zip(images, labels):
        glyphs.setdefault(int(lab), []).append(img)
    return glyphs


# ------------------------------------------------------------------ JSONL

def instance_to_dict(inst: Instance) -> dict:
    d = {"id": int(inst.id), "w": int(inst.w), "h": int(inst.h), "input": [float(v) for v in inst.input]}
    if inst.boxes is None:
        d["labels"] = [int(c) for c in inst.classes]
    else:
        d["elements"] = [
            {"box": [float(v) for v in box], "class": int(c)} for box, c in zip(inst.boxes, inst.classes)
        ]
    if inst.meta:
        d["meta"] = inst.meta
    return d


def instance_from_dict(d: dict) -> Instance:
    try:
        x = np.asarray(d["input"], dtype=float)
        w, h = int(d["w"]), int(d["h"])
        if "labels" in d:
            return Instance(int(d["id"]), x, w, h, np.asarray(d["labels"], dtype=np.int64))
        elems = d["elements"]
        boxes = np.array([e["box"] for e in elems], dtype=float).reshape(-1, 4)
        classes = np.array([e.get("class", 0) for e in elems], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed instance record: {exc}") from exc
    if len(boxes) and np.any((boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) <= 0):
        raise ValueError(f"instance {d['id']}: zero-area ground-truth box")
    return Instance(int(d["id"]), x, w, h, classes, boxes, d.get("meta", {}))


def write_jsonl(path, instances) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), sort_keys=True) + "\n")


def read_jsonl(path) -> list[Instance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(instance_from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out
