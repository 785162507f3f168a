"""Procedural task generators with exact oracles.

Glyphs are 8x8 synthetic shapes (a 12x12x3 color variant exists for the
cross-domain graph tasks).  List tasks train on lengths 2..5 and test on
6..8; grid shortest-path tasks train on 3x3/4x4 grids and test on 5x5,
with targets from a Bellman-Ford reference.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .lang import GraphType, ListType, TensorType, Type, parse_type, type_text

_GLYPH_ART = [
    # 10 distinct 8x8 shapes standing in for digit classes 0..9
    "########|#......#|#......#|#......#|#......#|#......#|#......#|########",
    "...##...|...##...|...##...|...##...|...##...|...##...|...##...|...##...",
    "########|########|########|########|........|........|........|........",
    "........|........|........|........|########|########|########|########",
    "####....|####....|####....|####....|####....|####....|####....|####....",
    "#......#|.#....#.|..#..#..|...##...|...##...|..#..#..|.#....#.|#......#",
    "...##...|...##...|...##...|########|########|...##...|...##...|...##...",
    "##..##..|##..##..|..##..##|..##..##|##..##..|##..##..|..##..##|..##..##",
    "........|########|########|........|........|########|########|........",
    "........|........|..####..|..####..|..####..|..####..|........|........",
]


def _template(cls: int) -> np.ndarray:
    rows = _GLYPH_ART[cls].split("|")
    return np.array([[1.0 if ch == "#" else 0.0 for ch in r] for r in rows])


@dataclass
class GlyphSpec:
    n_classes: int = 10
    side: int = 8
    max_shift: int = 1
    noise_sigma: float = 0.05


def gen_glyphs(cls, count, seed, spec: GlyphSpec | None = None):
    """Deterministic jittered renderings of one glyph class."""
    spec = spec or GlyphSpec()
    if not 0 <= cls < spec.n_classes:
        raise ValueError(f"class must be in 0..{spec.n_classes - 1}, got {cls}")
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    rng = np.random.default_rng(entropy + [cls])
    base = _template(cls)
    out = np.zeros((count, spec.side, spec.side))
    for i in range(count):
        dy, dx = rng.integers(-spec.max_shift, spec.max_shift + 1, size=2)
        img = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
        out[i] = img
    return out


def gen_color_glyph(cls, rng, side=12):
    """One 12x12x3 color rendering of a glyph class (channels-first)."""
    base = _template(cls)
    dy, dx = rng.integers(-1, 2, size=2)
    img = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
    out = np.full((3, side, side), 0.1)
    off = (side - 8) // 2
    ch = cls % 3
    out[ch, off:off + 8, off:off + 8] += img
    out[(ch + 1) % 3, off:off + 8, off:off + 8] += 0.3 * img
    out += rng.normal(0.0, 0.05, out.shape)
    return out


# ---------------------------------------------------------------------------
# tasks


@dataclass
class Task:
    name: str
    input_type: Type
    output_type: Type
    kind: str                 # 'tensor' | 'list' | 'graph'
    classify: bool = False
    splits: dict = field(default_factory=dict)   # name -> list of (x, y)

    @property
    def signature(self):
        from .lang import FunType
        return FunType(self.input_type, self.output_type)


IMG_T = TensorType("real", (8, 8))
BOOL1 = TensorType("bool", (1,))
REAL1 = TensorType("real", (1,))


def _split_counts(n, fraction):
    base = int(round(n * fraction))
    n_train = int(base * 0.8)
    n_val = int(base * 0.1)
    n_test = base - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"dataset of {base} too small to split 80/10/10")
    return {"train": n_train, "val": n_val, "test": n_test}


def make_recognize_task(cls, n, fraction, seed, spec=None):
    """Balanced binary classification: does the image show glyph `cls`?"""
    spec = spec or GlyphSpec()
    counts = _split_counts(n, fraction)
    rng = np.random.default_rng([seed, 101])
    task = Task(f"recognize_{cls}", IMG_T, BOOL1, "tensor")
    stream = 0
    for split, m in counts.items():
        samples = []
        for i in range(m):
            positive = i % 2 == 0
            c = cls if positive else _other_class(rng, cls, spec.n_classes)
            img = gen_glyphs(c, 1, [seed, split == "train", stream], spec)[0]
            stream += 1
            samples.append((img, np.array([1.0 if positive else 0.0])))
        order = rng.permutation(len(samples))
        task.splits[split] = [samples[j] for j in order]
    return task


def _other_class(rng, cls, n_classes):
    c = int(rng.integers(0, n_classes - 1))
    return c + 1 if c >= cls else c


def _make_list_task(name, label_fn, element_fn, n, fraction, seed):
    counts = _split_counts(n, fraction)
    lengths = {"train": (2, 5), "val": (2, 5), "test": (6, 8)}
    task = Task(name, ListType(IMG_T), REAL1, "list")
    for si, (split, m) in enumerate(counts.items()):
        rng = np.random.default_rng([seed, 7, si])
        lo, hi = lengths[split]
        samples = []
        for _ in range(m):
            k = int(rng.integers(lo, hi + 1))
            classes = [element_fn(rng) for _ in range(k)]
            imgs = [gen_glyphs(c, 1, [seed, si, int(rng.integers(1 << 30))])[0]
                    for c in classes]
            samples.append((imgs, np.array([float(label_fn(classes))])))
        task.splits[split] = samples
    return task


def make_count_task(cls, n, fraction, seed):
    """Count occurrences of glyph class `cls` in a list of images."""

    def element(rng):
        return cls if rng.random() < 0.5 else _other_class(rng, cls, 10)

    return _make_list_task(f"count_{cls}", lambda cs: cs.count(cls),
                           element, n, fraction, seed)


def make_sum_task(n, fraction, seed):
    """Sum the class ids of a list of glyph images."""
    return _make_list_task("sum", sum, lambda rng: int(rng.integers(0, 10)),
                           n, fraction, seed)


# ---------------------------------------------------------------------------
# grid shortest path


PENALTY_CLASSES = (1, 2, 3)
PENALTY_UNIT = 0.1


def grid_adjacency(side):
    """4-neighborhood on a side x side grid, nodes in row-major order."""
    adj = []
    for r in range(side):
        for c in range(side):
            nbrs = []
            for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < side and 0 <= cc < side:
                    nbrs.append(rr * side + cc)
            adj.append(sorted(nbrs))
    return adj


def max_distance_constant(side, max_penalty=PENALTY_CLASSES[-1] * PENALTY_UNIT):
    return 2.0 * side * side * max_penalty


def bellman_ford_oracle(penalties, adj, source, M=None, iters=None):
    """Fixed point of d'(u) = min(d(u), min over neighbors v of d(v)+w(u)),
    where w(u) is the penalty paid for entering node u."""
    n = len(penalties)
    if M is None:
        M = 2.0 * n * max(penalties)
    d = np.full(n, float(M))
    d[source] = 0.0
    for _ in range(iters if iters is not None else n - 1):
        nd = d.copy()
        for u in range(n):
            for v in adj[u]:
                nd[u] = min(nd[u], d[v] + penalties[u])
        d = nd
    return d


@dataclass
class GridSample:
    nodes: np.ndarray          # [V, C, H, W]
    adj: list
    side: int


def _grid_sample(side, rng, seed_stream, color=False):
    V = side * side
    classes = rng.integers(PENALTY_CLASSES[0], PENALTY_CLASSES[-1] + 1, size=V)
    penalties = classes * PENALTY_UNIT
    adj = grid_adjacency(side)
    M = max_distance_constant(side)
    targets = bellman_ford_oracle(penalties, adj, 0, M=M)
    nodes = []
    for u in range(V):
        if color:
            img = gen_color_glyph(int(classes[u]), rng)
        else:
            img = gen_glyphs(int(classes[u]), 1,
                             [seed_stream, int(rng.integers(1 << 30))])[0]
            img = img[None, :, :]
        init = np.full((1,) + img.shape[1:], 0.0 if u == 0 else M)
        nodes.append(np.concatenate([img, init], axis=0))
    return GridSample(np.stack(nodes), adj, side), targets.reshape(-1, 1)


def shortest_path_node_type(color=False):
    return TensorType("real", (4, 12, 12) if color else (2, 8, 8))


def make_shortest_path_task(count, seed, color=False, train_sides=(3, 4),
                            test_side=5):
    """Grid shortest-path task: graph<node image> -> graph<real[1]>.

    Node images carry the penalty glyph plus an initial-distance channel
    (0 at the source, the max-distance constant M elsewhere).
    """
    node_t = shortest_path_node_type(color)
    task = Task("shortest_path_color" if color else "shortest_path",
                GraphType(node_t), GraphType(REAL1), "graph")
    counts = {"train": int(count * 0.8), "val": max(int(count * 0.1), 1),
              "test": max(count - int(count * 0.8) - max(int(count * 0.1), 1), 1)}
    for si, (split, m) in enumerate(counts.items()):
        rng = np.random.default_rng([seed, 13, si, int(color)])
        sides = train_sides if split in ("train", "val") else (test_side,)
        samples = []
        for i in range(m):
            side = sides[i % len(sides)]
            samples.append(_grid_sample(side, rng, seed * 1000 + si, color))
        task.splits[split] = samples
    return task


# ---------------------------------------------------------------------------
# dataset files: manifest + raw little-endian row-major payloads


def _sha(b):
    return hashlib.sha256(b).hexdigest()


def write_dataset(task: Task, path):
    os.makedirs(path, exist_ok=True)
    manifest = {"schema": 1, "name": task.name, "kind": task.kind,
                "classify": task.classify,
                "input_type": type_text(task.input_type),
                "output_type": type_text(task.output_type), "splits": {}}
    for split, samples in task.splits.items():
        xs, ys, shapes = [], [], []
        for x, y in samples:
            if task.kind == "tensor":
                xs.append(x.reshape(-1))
                shapes.append([])
            elif task.kind == "list":
                xs.append(np.concatenate([e.reshape(-1) for e in x]))
                shapes.append([len(x)])
            else:
                xs.append(x.nodes.reshape(-1))
                shapes.append([x.side])
            ys.append(np.asarray(y).reshape(-1))
        xraw = np.concatenate(xs).astype("<f8").tobytes() if xs else b""
        yraw = np.concatenate(ys).astype("<f8").tobytes() if ys else b""
        with open(os.path.join(path, f"{split}_x.bin"), "wb") as f:
            f.write(xraw)
        with open(os.path.join(path, f"{split}_y.bin"), "wb") as f:
            f.write(yraw)
        manifest["splits"][split] = {
            "count": len(samples), "shapes": shapes,
            "x_sha256": _sha(xraw), "y_sha256": _sha(yraw)}
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def read_dataset(path) -> Task:
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    in_t = parse_type(manifest["input_type"])
    out_t = parse_type(manifest["output_type"])
    kind = manifest["kind"]
    task = Task(manifest["name"], in_t, out_t, kind,
                classify=manifest["classify"])
    elem_t = in_t.elem if kind == "list" else (in_t.node if kind == "graph"
                                               else in_t)
    elem_shape = tuple(elem_t.dims)
    elem_size = int(np.prod(elem_shape)) if elem_shape else 1
    for split, info in manifest["splits"].items():
        with open(os.path.join(path, f"{split}_x.bin"), "rb") as f:
            xraw = f.read()
        with open(os.path.join(path, f"{split}_y.bin"), "rb") as f:
            yraw = f.read()
        if _sha(xraw) != info["x_sha256"] or _sha(yraw) != info["y_sha256"]:
            raise IOError(f"dataset checksum mismatch in {path} ({split})")
        xflat = np.frombuffer(xraw, dtype="<f8")
        yflat = np.frombuffer(yraw, dtype="<f8")
        samples = []
        xpos = ypos = 0
        out_size = int(np.prod(out_t.dims)) if kind != "graph" else 1
        for shape in info["shapes"]:
            if kind == "tensor":
                x = xflat[xpos:xpos + elem_size].reshape(elem_shape).copy()
                xpos += elem_size
                ny = out_size
            elif kind == "list":
                k = shape[0]
                x = [xflat[xpos + j * elem_size:xpos + (j + 1) * elem_size]
                     .reshape(elem_shape).copy() for j in range(k)]
                xpos += k * elem_size
                ny = out_size
            else:
                side = shape[0]
                V = side * side
                x = GridSample(
                    xflat[xpos:xpos + V * elem_size]
                    .reshape((V,) + elem_shape).copy(),
                    grid_adjacency(side), side)
                xpos += V * elem_size
                ny = V
            y = yflat[ypos:ypos + ny].copy()
            if kind == "graph":
                y = y.reshape(-1, 1)
            ypos += ny
            samples.append((x, y))
        task.splits[split] = samples
    return task
