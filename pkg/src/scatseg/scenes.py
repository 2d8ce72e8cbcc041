"""Synthetic labelled scenes and the PCLOUD text format.

Scene spec files use ``key = value`` lines; every ``primitive`` line adds one
surface::

    extent = 4 4 2.5
    noise_sigma = 0.005
    seed = 7
    primitive = floor_plane class=0 center=2,2,0 size=4,4 density=150
    primitive = box class=2 center=1,1,0.75 size=1.2,0.8,0.05 density=400
    primitive = sphere class=5 center=3,3,1.2 radius=0.25 density=600
    primitive = cylinder class=3 center=2,1,0 radius=0.25 height=0.45 density=600

Cylinder ``center`` is the bottom-centre; the surface is the side wall plus
the top disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SpecError
from .geometry import PointCloud

SHAPES = ("floor_plane", "box", "sphere", "cylinder")

# well-separated base colors, indexed by class id
PALETTE = np.array([
    [0.55, 0.45, 0.35],
    [0.90, 0.90, 0.85],
    [0.85, 0.20, 0.15],
    [0.15, 0.70, 0.25],
    [0.20, 0.30, 0.85],
    [0.95, 0.80, 0.10],
    [0.65, 0.20, 0.75],
    [0.10, 0.75, 0.80],
])


COLOR_JITTER = 0.03


def class_color(class_id):
    return PALETTE[class_id % len(PALETTE)]


@dataclass
class Primitive:
    shape: str
    class_id: int
    center: tuple
    size: tuple
    density: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SpecError(f"unknown primitive shape {self.shape!r}")
        if self.density <= 0:
            raise SpecError(f"primitive density must be positive, got {self.density}")
        if self.class_id < 0:
            raise SpecError("class ids are non-negative")
        want = {"floor_plane": 2, "box": 3, "sphere": 1, "cylinder": 2}[self.shape]
        if len(self.size) != want:
            raise SpecError(f"{self.shape} needs {want} size values, got {len(self.size)}")

    @property
    def area(self):
        s = self.size
        if self.shape == "floor_plane":
            return s[0] * s[1]
        if self.shape == "box":
            return 2.0 * (s[0] * s[1] + s[0] * s[2] + s[1] * s[2])
        if self.shape == "sphere":
            return 4.0 * math.pi * s[0] ** 2
        r, h = s
        return 2.0 * math.pi * r * h + math.pi * r * r

    @property
    def n_points(self):
        return int(np.rint(self.area * self.density))

    def sample(self, rng, n=None):
        n = self.n_points if n is None else n
        c = np.asarray(self.center, dtype=np.float64)
        s = self.size
        if self.shape == "floor_plane":
            uv = rng.uniform(-0.5, 0.5, size=(n, 2)) * np.array(s)
            return np.column_stack([uv + c[:2], np.full(n, c[2])])
        if self.shape == "box":
            half = np.asarray(s) / 2.0
            faces = np.array([s[1] * s[2], s[1] * s[2], s[0] * s[2], s[0] * s[2], s[0] * s[1], s[0] * s[1]])
            face = rng.choice(6, size=n, p=faces / faces.sum())
            pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
            axis = face // 2
            sign = np.where(face % 2 == 0, -1.0, 1.0)
            pts[np.arange(n), axis] = sign * half[axis]
            return pts + c
        if self.shape == "sphere":
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return v * s[0] + c
        r, h = s
        side = 2.0 * math.pi * r * h
        on_side = rng.uniform(size=n) < side / self.area
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        rad = np.where(on_side, r, r * np.sqrt(rng.uniform(size=n)))
        z = np.where(on_side, rng.uniform(0.0, h, size=n), h)
        return np.column_stack([c[0] + rad * np.cos(theta), c[1] + rad * np.sin(theta), c[2] + z])

    def surface_distance(self, pts):
        """Euclidean distance from each point to this primitive's surface."""
        p = np.asarray(pts, dtype=np.float64)[:, :3] - np.asarray(self.center)
        s = self.size
        if self.shape == "floor_plane":
            dx = np.maximum(np.abs(p[:, 0]) - s[0] / 2, 0)
            dy = np.maximum(np.abs(p[:, 1]) - s[1] / 2, 0)
            return np.sqrt(dx ** 2 + dy ** 2 + p[:, 2] ** 2)
        if self.shape == "box":
            q = np.abs(p) - np.asarray(s) / 2
            outside = np.linalg.norm(np.maximum(q, 0), axis=1)
            inside = -np.minimum(q.max(axis=1), 0)
            return outside + inside
        if self.shape == "sphere":
            return np.abs(np.linalg.norm(p, axis=1) - s[0])
        r, h = s
        rad = np.hypot(p[:, 0], p[:, 1])
        dz = np.maximum(np.maximum(-p[:, 2], p[:, 2] - h), 0)
        d_side = np.hypot(rad - r, dz)
        d_top = np.hypot(np.maximum(rad - r, 0), p[:, 2] - h)
        return np.minimum(d_side, d_top)


@dataclass
class SceneSpec:
    primitives: list
    extent: tuple = (4.0, 4.0, 2.5)
    noise_sigma: float = 0.005
    color_jitter: float = COLOR_JITTER
    seed: int = 0
    meta: dict = field(default_factory=dict)


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Union of all primitive surfaces, jittered, labelled, with rgb colors."""
    if not spec.primitives:
        raise SpecError("scene has no primitives")
    rng = np.random.default_rng(spec.seed)
    xyz, rgb, lab = [], [], []
    for prim in spec.primitives:
        n = prim.n_points
        if n == 0:
            continue
        pts = prim.sample(rng, n)
        if spec.noise_sigma > 0:
            pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
        col = class_color(prim.class_id) + rng.normal(scale=spec.color_jitter, size=(n, 3))
        xyz.append(pts)
        rgb.append(np.clip(col, 0.0, 1.0))
        lab.append(np.full(n, prim.class_id, dtype=np.int64))
    if not xyz:
        raise SpecError("scene primitives produce zero points")
    return PointCloud(np.column_stack([np.concatenate(xyz), np.concatenate(rgb)]), np.concatenate(lab))


# ---------------------------------------------------------------- scene families

ROOM_CLASSES = ("floor", "wall", "table", "chair", "cabinet", "lamp", "sofa", "bin")
CLUTTER_CLASSES = ("floor", "crate", "ball", "pillar", "slab", "drum", "tower", "pebble")

FAMILIES = {"rooms": ROOM_CLASSES, "clutter": CLUTTER_CLASSES}

# S0 trains on the first fold and tests on the second; S1 swaps them
FOLDS = {
    "rooms": ((0, 2, 4, 6), (1, 3, 5, 7)),
    "clutter": ((0, 2, 4, 6), (1, 3, 5, 7)),
}


def class_split(family, split="S0"):
    """``(train_classes, test_classes)`` for a family and fold name."""
    a, b = FOLDS[family]
    if split == "S0":
        return list(a), list(b)
    if split == "S1":
        return list(b), list(a)
    raise SpecError(f"unknown split {split!r}")


def room_spec(seed, density=300.0, noise_sigma=0.005, color_jitter=COLOR_JITTER) -> SceneSpec:
    """Floor, four walls, tables, chairs, cabinets, lamps, sofas and bins."""
    rng = np.random.default_rng(seed)
    sx, sy = rng.uniform(3.0, 4.5, size=2)
    wall_h = 1.2
    prims = [Primitive("floor_plane", 0, (sx / 2, sy / 2, 0.0), (sx, sy), density)]
    t = 0.1
    prims += [
        Primitive("box", 1, (sx / 2, -t / 2, wall_h / 2), (sx, t, wall_h), density * 0.6),
        Primitive("box", 1, (sx / 2, sy + t / 2, wall_h / 2), (sx, t, wall_h), density * 0.6),
        Primitive("box", 1, (-t / 2, sy / 2, wall_h / 2), (t, sy, wall_h), density * 0.6),
        Primitive("box", 1, (sx + t / 2, sy / 2, wall_h / 2), (t, sy, wall_h), density * 0.6),
    ]

    def spot(margin):
        return rng.uniform(margin, sx - margin), rng.uniform(margin, sy - margin)

    for _ in range(rng.integers(1, 3)):
        x, y = spot(0.8)
        w, d = rng.uniform(0.8, 1.2), rng.uniform(0.6, 0.9)
        prims.append(Primitive("box", 2, (x, y, 0.7), (w, d, 0.06), density * 2.0))
    for _ in range(rng.integers(2, 4)):
        x, y = spot(0.4)
        prims.append(Primitive("cylinder", 3, (x, y, 0.0), (rng.uniform(0.18, 0.25), 0.45), density * 2.0))
    for _ in range(rng.integers(1, 3)):
        x = rng.uniform(0.5, sx - 0.5)
        y = 0.25 if rng.uniform() < 0.5 else sy - 0.25
        prims.append(Primitive("box", 4, (x, y, 0.5), (rng.uniform(0.6, 0.9), 0.4, 1.0), density * 1.2))
    for _ in range(rng.integers(1, 3)):
        x, y = spot(0.5)
        prims.append(Primitive("sphere", 5, (x, y, rng.uniform(0.9, 1.1)), (rng.uniform(0.18, 0.25),),
                               density * 2.0))
    for _ in range(rng.integers(1, 3)):
        x, y = spot(0.7)
        prims.append(Primitive("box", 6, (x, y, 0.25), (rng.uniform(1.0, 1.4), 0.7, 0.5), density * 1.2))
    for _ in range(rng.integers(1, 3)):
        x, y = spot(0.3)
        side = rng.uniform(0.25, 0.35)
        prims.append(Primitive("box", 7, (x, y, side / 2), (side, side, side), density * 2.5))
    return SceneSpec(prims, (sx, sy, wall_h), noise_sigma, color_jitter, int(seed), {"family": "rooms"})


def clutter_spec(seed, density=300.0, noise_sigma=0.005, color_jitter=COLOR_JITTER) -> SceneSpec:
    """Floor with random crates, balls, pillars, slabs, drums, towers and pebbles."""
    rng = np.random.default_rng(seed)
    sx, sy = rng.uniform(3.0, 4.5, size=2)
    prims = [Primitive("floor_plane", 0, (sx / 2, sy / 2, 0.0), (sx, sy), density)]
    makers = {
        1: lambda x, y: Primitive("box", 1, (x, y, 0.2), tuple(rng.uniform(0.3, 0.5, 3)), density * 2),
        2: lambda x, y: Primitive("sphere", 2, (x, y, 0.3), (rng.uniform(0.2, 0.3),), density * 2),
        3: lambda x, y: Primitive("cylinder", 3, (x, y, 0.0), (0.12, rng.uniform(0.9, 1.2)), density * 2),
        4: lambda x, y: Primitive("box", 4, (x, y, 0.05), (rng.uniform(0.8, 1.2), rng.uniform(0.6, 0.9), 0.1),
                                  density * 2),
        5: lambda x, y: Primitive("cylinder", 5, (x, y, 0.0), (0.3, 0.5), density * 2),
        6: lambda x, y: Primitive("box", 6, (x, y, 0.6), (0.3, 0.3, 1.2), density * 2),
        7: lambda x, y: Primitive("sphere", 7, (x, y, 0.12), (0.12,), density * 3),
    }
    for cls, make in makers.items():
        for _ in range(rng.integers(1, 3)):
            prims.append(make(rng.uniform(0.4, sx - 0.4), rng.uniform(0.4, sy - 0.4)))
    return SceneSpec(prims, (sx, sy, 1.2), noise_sigma, color_jitter, int(seed), {"family": "clutter"})


def family_specs(family, n_scenes, seed, **kw):
    """``n_scenes`` scene specs of a family, seeded from one base seed."""
    make = {"rooms": room_spec, "clutter": clutter_spec}.get(family)
    if make is None:
        raise SpecError(f"unknown scene family {family!r}")
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    return [make(int(s), **kw) for s in seeds]


def family_scenes(family, n_scenes, seed, **kw):
    """Generate ``n_scenes`` clouds of a family from a base seed."""
    return [generate_scene(spec) for spec in family_specs(family, n_scenes, seed, **kw)]


# ---------------------------------------------------------------- spec files

def _floats(text, key):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise SpecError(f"bad numeric value for {key}: {text!r}") from None


def parse_primitive(text) -> Primitive:
    tokens = text.split()
    if not tokens:
        raise SpecError("empty primitive line")
    shape, kv = tokens[0], {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise SpecError(f"expected key=value in primitive, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    try:
        cls = int(kv.pop("class"))
        center = _floats(kv.pop("center"), "center")
        density = float(kv.pop("density"))
    except KeyError as exc:
        raise SpecError(f"primitive missing {exc.args[0]!r}") from None
    if shape in ("floor_plane", "box"):
        size = _floats(kv.pop("size", ""), "size")
    elif shape == "sphere":
        size = _floats(kv.pop("radius", ""), "radius")
    else:
        size = _floats(kv.pop("radius", ""), "radius") + _floats(kv.pop("height", ""), "height")
    if kv:
        raise SpecError(f"unknown primitive keys {sorted(kv)}")
    if len(center) != 3:
        raise SpecError("center needs three values")
    return Primitive(shape, cls, center, size, density)


def format_primitive(p: Primitive) -> str:
    c = ",".join(repr(float(v)) for v in p.center)
    if p.shape in ("floor_plane", "box"):
        dims = "size=" + ",".join(repr(float(v)) for v in p.size)
    elif p.shape == "sphere":
        dims = f"radius={p.size[0]!r}"
    else:
        dims = f"radius={p.size[0]!r} height={p.size[1]!r}"
    return f"{p.shape} class={p.class_id} center={c} {dims} density={p.density!r}"


def read_scene_spec(path) -> SceneSpec:
    prims, fields = [], {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            try:
                if key == "primitive":
                    prims.append(parse_primitive(val))
                elif key == "extent":
                    fields["extent"] = _floats(val, key)
                elif key in ("noise_sigma", "color_jitter"):
                    fields[key] = float(val)
                elif key == "seed":
                    fields["seed"] = int(val)
                else:
                    raise SpecError(f"unknown key {key!r}")
            except (SpecError, ValueError) as exc:
                raise SpecError(f"{path}:{lineno}: {exc}") from None
    if not prims:
        raise SpecError(f"{path}: no primitives")
    return SceneSpec(prims, **fields)


def write_scene_spec(spec: SceneSpec, path):
    with open(path, "w") as fh:
        fh.write(f"extent = {' '.join(repr(float(v)) for v in spec.extent)}\n")
        fh.write(f"noise_sigma = {spec.noise_sigma!r}\n")
        fh.write(f"color_jitter = {spec.color_jitter!r}\n")
        fh.write(f"seed = {spec.seed}\n")
        for p in spec.primitives:
            fh.write(f"primitive = {format_primitive(p)}\n")


# ---------------------------------------------------------------- PCLOUD files

def format_cloud(pc: PointCloud) -> str:
    has = pc.labels is not None
    lines = [f"PCLOUD 1 {pc.n} {pc.points.shape[1]} {int(has)}"]
    for i in range(pc.n):
        row = " ".join(repr(float(v)) for v in pc.points[i])
        lines.append(f"{row} {int(pc.labels[i])}" if has else row)
    return "\n".join(lines) + "\n"


def write_cloud(pc: PointCloud, path):
    with open(path, "w") as fh:
        fh.write(format_cloud(pc))


def parse_cloud(text, source="<string>") -> PointCloud:
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{source}: empty file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "PCLOUD" or head[1] != "1":
        raise FormatError(f"{source}: header must be 'PCLOUD 1 <N> <C> <has_labels>'", 1)
    try:
        n, c, has = int(head[2]), int(head[3]), int(head[4])
    except ValueError:
        raise FormatError(f"{source}: non-integer header field", 1) from None
    if n < 1 or c < 3 or has not in (0, 1):
        raise FormatError(f"{source}: invalid header values", 1)
    width = c + has
    pts = np.empty((n, c))
    labels = np.empty(n, dtype=np.int64) if has else None
    for i in range(n):
        lineno = i + 2
        if i + 1 >= len(lines):
            raise FormatError(f"{source}: expected {n} rows, file ends early", lineno)
        cols = lines[i + 1].split()
        if len(cols) != width:
            raise FormatError(f"{source}: expected {width} values, got {len(cols)}", lineno)
        try:
            pts[i] = [float(v) for v in cols[:c]]
            if has:
                labels[i] = int(cols[c])
        except ValueError:
            raise FormatError(f"{source}: malformed number", lineno) from None
        if has and labels[i] < 0:
            raise FormatError(f"{source}: negative label", lineno)
    extra = [ln for ln in lines[n + 1:] if ln.strip()]
    if extra:
        raise FormatError(f"{source}: trailing data", n + 2)
    return PointCloud(pts, labels)


def read_cloud(path) -> PointCloud:
    with open(path) as fh:
        return parse_cloud(fh.read(), str(path))
