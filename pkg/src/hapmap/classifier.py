"""Permutation-invariant point-set classifier and its trainer.

The network applies a shared MLP to every point, collapses the point axis
with a coordinatewise max (which makes the forward pass exactly invariant
to point order), and classifies the pooled feature vector with a dense
head.  Everything runs on plain numpy; gradients are hand-derived and
verified against central finite differences by ``grad_check``.

Also houses the class taxonomy (fine object classes and the coarse
groupings used for training and for tactile labeling), input
canonicalization and augmentation, OFF mesh surface sampling, and the
flat binary model format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

# ---------------------------------------------------------------------------
# Taxonomy
# ---------------------------------------------------------------------------

FINE_CLASSES = (
    "chair", "stool", "bed", "sofa", "bench",
    "table", "desk", "night_stand",
    "dresser", "wardrobe", "bookshelf",
    "bathtub", "toilet", "stairs", "door", "window",
)

#: doors and windows are defined but kept out of training: as wall openings
#: they are easily confused with holes and closed walls in depth data
TRAINED_FINE_CLASSES = tuple(c for c in FINE_CLASSES if c not in ("door", "window"))

_GROUP_OF_FINE = {
    "chair": "sit_on", "stool": "sit_on", "bed": "sit_on",
    "sofa": "sit_on", "bench": "sit_on",
    "table": "put_on", "desk": "put_on", "night_stand": "put_on",
    "dresser": "store_in", "wardrobe": "store_in", "bookshelf": "store_in",
    "bathtub": "bathtub", "toilet": "toilet", "stairs": "stairs",
    "door": "door", "window": "window",
}

TRAINING_COARSE_CLASSES = ("sit_on", "put_on", "store_in", "bathtub", "toilet", "stairs")
LABELING_COARSE_CLASSES = ("sit_on", "put_on", "store_in", "sanitary", "window", "door", "stairs")

TRAINING_MEMBERS = {
    "sit_on": ("chair", "stool", "bed", "sofa", "bench"),
    "put_on": ("table", "desk", "night_stand"),
    "store_in": ("dresser", "wardrobe", "bookshelf"),
    "bathtub": ("bathtub",),
    "toilet": ("toilet",),
    "stairs": ("stairs",),
}


def merge_labels(fine: str, taxonomy: str = "training") -> str:
    """Map a fine class to its coarse class.

    The training taxonomy keeps bathtub and toilet separate (6 classes);
    the labeling taxonomy folds them into "sanitary" and adds door and
    window (7 classes).
    """
    if fine not in _GROUP_OF_FINE:
        raise ValueError(f"unknown fine class {fine!r}")
    group = _GROUP_OF_FINE[fine]
    if taxonomy == "training":
        if group in ("door", "window"):
            raise ValueError(f"{fine!r} has no training class")
        return group
    if taxonomy == "labeling":
        return "sanitary" if group in ("bathtub", "toilet") else group
    raise ValueError(f"unknown taxonomy {taxonomy!r}")


def to_labeling_class(name: str) -> str:
    """Translate a model output class (fine or training-coarse) for labeling."""
    if name in _GROUP_OF_FINE:
        return merge_labels(name, taxonomy="labeling")
    if name in LABELING_COARSE_CLASSES:
        return name
    raise ValueError(f"unknown class {name!r}")


# ---------------------------------------------------------------------------
# Input canonicalization and augmentation
# ---------------------------------------------------------------------------

def normalize_unit_sphere(cloud: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud that collapses to a single location maps to all-zeros.
    """
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty cloud")
    centered = pts - pts.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0.0:
        return centered
    return centered / radius


def augment(cloud: np.ndarray, rng: np.random.Generator, sigma: float = 0.01,
            clip: float = 0.05, angle: float | None = None) -> np.ndarray:
    """Random yaw rotation plus clipped Gaussian jitter on a normalized cloud.

    angle overrides the uniform [0, 2*pi) draw when given (mainly for tests).
    """
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if angle is None:
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
    c, s = np.cos(angle), np.sin(angle)
    out = pts.copy()
    out[:, 0] = pts[:, 0] * c + pts[:, 2] * s
    out[:, 2] = -pts[:, 0] * s + pts[:, 2] * c
    if sigma > 0:
        out += np.clip(rng.normal(0.0, sigma, out.shape), -clip, clip)
    return out


def resample_points(cloud: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fix the point count to n: without replacement when possible."""
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    m = pts.shape[0]
    if m == 0:
        raise ValueError("empty cloud")
    idx = rng.choice(m, size=n, replace=m < n)
    return pts[idx]


# ---------------------------------------------------------------------------
# OFF mesh sampling
# ---------------------------------------------------------------------------

class MeshFormatError(ValueError):
    """Malformed OFF mesh."""


def _off_tokens(text: str) -> list[str]:
    tokens = []
    for line in text.splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    return tokens


def sample_mesh_off(off_bytes: bytes, n_points: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Surface-sample an ASCII OFF mesh into an (n_points, 3) cloud.

    Faces are picked with probability proportional to area, then a point
    is drawn uniformly inside the triangle; polygons are fan-triangulated.
    Handles the common header quirk where the counts share the OFF line.
    """
    try:
        text = off_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MeshFormatError("OFF file is not valid text") from exc
    stripped = text.lstrip()
    if not stripped.startswith("OFF"):
        raise MeshFormatError("missing OFF header")
    tokens = _off_tokens(stripped[3:])
    pos = 0

    def take(count):
        nonlocal pos
        if pos + count > len(tokens):
            raise MeshFormatError("truncated OFF data")
        out = tokens[pos:pos + count]
        pos += count
        return out

    try:
        nv, nf, _ = (int(t) for t in take(3))
        verts = np.array([float(t) for t in take(3 * nv)]).reshape(nv, 3)
        tris = []
        for _ in range(nf):
            m = int(take(1)[0])
            if m < 3:
                raise MeshFormatError("face with fewer than 3 vertices")
            idx = [int(t) for t in take(m)]
            if max(idx) >= nv or min(idx) < 0:
                raise MeshFormatError("face index out of range")
            for j in range(1, m - 1):
                tris.append((idx[0], idx[j], idx[j + 1]))
    except ValueError as exc:
        raise MeshFormatError(f"malformed OFF data: {exc}") from exc
    if pos != len(tokens):
        raise MeshFormatError("trailing OFF data (face count mismatch?)")
    if not tris:
        raise MeshFormatError("mesh has no faces")

    tri = np.array(tris)
    a = verts[tri[:, 0]]
    b = verts[tri[:, 1]]
    c = verts[tri[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise MeshFormatError("mesh has zero total surface area")
    picks = rng.choice(len(tri), size=n_points, p=areas / total)
    r1 = rng.random(n_points)
    r2 = rng.random(n_points)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    pa, pb, pc = a[picks], b[picks], c[picks]
    return pa + r1[:, None] * (pb - pa) + r2[:, None] * (pc - pa)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"PSM1"


@dataclass
class PointSetModel:
    classes: tuple[str, ...]
    n_points: int
    point_weights: list[np.ndarray]
    point_biases: list[np.ndarray]
    head_weights: list[np.ndarray]
    head_biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def point_widths(self) -> tuple[int, ...]:
        return (self.point_weights[0].shape[0],
                *(w.shape[1] for w in self.point_weights))

    @property
    def head_widths(self) -> tuple[int, ...]:
        return (self.head_weights[0].shape[0],
                *(w.shape[1] for w in self.head_weights))

    def parameters(self):
        yield from self.point_weights
        yield from self.point_biases
        yield from self.head_weights
        yield from self.head_biases

    def astype(self, dtype) -> "PointSetModel":
        return PointSetModel(
            classes=self.classes, n_points=self.n_points,
            point_weights=[w.astype(dtype) for w in self.point_weights],
            point_biases=[b.astype(dtype) for b in self.point_biases],
            head_weights=[w.astype(dtype) for w in self.head_weights],
            head_biases=[b.astype(dtype) for b in self.head_biases],
            meta=dict(self.meta))


def init_model(classes, n_points: int = 256,
               point_widths: tuple[int, ...] = (3, 64, 128, 256),
               head_hidden: tuple[int, ...] = (128,),
               rng: np.random.Generator | None = None,
               dtype=np.float32) -> PointSetModel:
    """He-initialized model; head widths are (pooled, *head_hidden, n_classes)."""
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    if rng is None:
        rng = np.random.default_rng(0)
    head_widths = (point_widths[-1], *head_hidden, len(classes))

    def layer(n_in, n_out):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
        return w.astype(dtype), np.zeros(n_out, dtype=dtype)

    pw, pb, hw, hb = [], [], [], []
    for a, b in zip(point_widths[:-1], point_widths[1:]):
        w, bias = layer(a, b)
        pw.append(w)
        pb.append(bias)
    for a, b in zip(head_widths[:-1], head_widths[1:]):
        w, bias = layer(a, b)
        hw.append(w)
        hb.append(bias)
    return PointSetModel(classes=classes, n_points=n_points,
                         point_weights=pw, point_biases=pb,
                         head_weights=hw, head_biases=hb)


def _forward_batch(model: PointSetModel, x: np.ndarray, want_cache: bool):
    """Logits for x of shape (B, n, 3); optionally the backprop cache."""
    bsz, npts, dim = x.shape
    if dim != model.point_weights[0].shape[0]:
        raise ValueError(f"width mismatch: points have {dim} coordinates, "
                         f"model expects {model.point_weights[0].shape[0]}")
    dtype = model.point_weights[0].dtype
    h = x.reshape(bsz * npts, dim).astype(dtype)
    point_inputs = []
    point_outputs = []
    for w, b in zip(model.point_weights, model.point_biases):
        point_inputs.append(h)
        h = np.maximum(h @ w + b, 0.0)
        point_outputs.append(h)
    feat = h.reshape(bsz, npts, -1)
    pooled = feat.max(axis=1)
    argmax = feat.argmax(axis=1)

    head_inputs = []
    h = pooled
    for i, (w, b) in enumerate(zip(model.head_weights, model.head_biases)):
        head_inputs.append(h)
        h = h @ w + b
        if i < len(model.head_weights) - 1:
            h = np.maximum(h, 0.0)
    logits = h
    if not want_cache:
        return logits, None
    return logits, {"point_inputs": point_inputs, "point_outputs": point_outputs,
                    "argmax": argmax, "head_inputs": head_inputs,
                    "shape": (bsz, npts)}


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: PointSetModel, cloud: np.ndarray) -> np.ndarray:
    """Class probabilities for one cloud; exactly point-order invariant."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("cloud must be (n, 3)")
    logits, _ = _forward_batch(model, pts[None], want_cache=False)
    return _softmax64(logits)[0]


def loss_and_grads(model: PointSetModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch plus gradients for every parameter.

    Max-pool routes each pooled feature's gradient to the first point that
    attains the maximum, which matches the forward tie-break.
    """
    logits, cache = _forward_batch(model, x, want_cache=True)
    bsz, npts = cache["shape"]
    probs = _softmax64(logits)
    logp = np.log(probs[np.arange(bsz), y])
    loss = float(-logp.mean())
    dtype = model.point_weights[0].dtype

    dlogits = probs.astype(dtype)
    dlogits[np.arange(bsz), y] -= 1.0
    dlogits /= bsz

    hw_grads = [None] * len(model.head_weights)
    hb_grads = [None] * len(model.head_weights)
    d = dlogits
    for i in range(len(model.head_weights) - 1, -1, -1):
        inp = cache["head_inputs"][i]
        hw_grads[i] = inp.T @ d
        hb_grads[i] = d.sum(axis=0)
        d = d @ model.head_weights[i].T
        if i > 0:
            d = d * (inp > 0)

    dpooled = d
    nfeat = dpooled.shape[1]
    dfeat = np.zeros((bsz, npts, nfeat), dtype=dtype)
    rows = np.arange(bsz)[:, None]
    cols = np.arange(nfeat)[None, :]
    dfeat[rows, cache["argmax"], cols] = dpooled
    d = dfeat.reshape(bsz * npts, nfeat)

    pw_grads = [None] * len(model.point_weights)
    pb_grads = [None] * len(model.point_weights)
    for i in range(len(model.point_weights) - 1, -1, -1):
        inp = cache["point_inputs"][i]
        d = d * (cache["point_outputs"][i] > 0)   # relu mask
        pw_grads[i] = inp.T @ d
        pb_grads[i] = d.sum(axis=0)
        if i > 0:
            d = d @ model.point_weights[i].T

    grads = {"pw": pw_grads, "pb": pb_grads, "hw": hw_grads, "hb": hb_grads}
    acc = float((probs.argmax(axis=1) == y).mean())
    return loss, grads, acc


def grad_check(model: PointSetModel, x: np.ndarray, y: np.ndarray,
               step: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    Every parameter entry is perturbed by +-step; the relative error uses
    the bounded denominator max(1, |analytic|, |numeric|).  Meant for tiny
    models (widths <= 16, n <= 32); runs in float64.
    """
    m = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, grads, _ = loss_and_grads(m, x, y)
    flat_grads = grads["pw"] + grads["pb"] + grads["hw"] + grads["hb"]

    def batch_loss():
        logits, _ = _forward_batch(m, x, want_cache=False)
        probs = _softmax64(logits)
        return float(-np.log(probs[np.arange(len(y)), y]).mean())

    worst = 0.0
    for param, grad in zip(m.parameters(), flat_grads):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + step
            up = batch_loss()
            flat_p[j] = orig - step
            down = batch_loss()
            flat_p[j] = orig
            numeric = (up - down) / (2 * step)
            denom = max(1.0, abs(flat_g[j]), abs(numeric))
            worst = max(worst, abs(flat_g[j] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.5
    decay_every: int = 20
    seed: int = 0
    n_points: int = 256
    point_widths: tuple[int, ...] = (3, 64, 128, 256)
    head_hidden: tuple[int, ...] = (128,)
    augment: bool = True
    augment_sigma: float = 0.01
    augment_clip: float = 0.05


def _canonicalize(clouds, n_points, rng) -> np.ndarray:
    out = np.empty((len(clouds), n_points, 3), dtype=np.float32)
    for i, cloud in enumerate(clouds):
        out[i] = normalize_unit_sphere(resample_points(cloud, n_points, rng))
    return out


def _augment_batch(x: np.ndarray, rng, sigma, clip) -> np.ndarray:
    angles = rng.uniform(0.0, 2.0 * np.pi, size=x.shape[0])
    c = np.cos(angles)[:, None].astype(x.dtype)
    s = np.sin(angles)[:, None].astype(x.dtype)
    out = x.copy()
    out[:, :, 0] = x[:, :, 0] * c + x[:, :, 2] * s
    out[:, :, 2] = -x[:, :, 0] * s + x[:, :, 2] * c
    if sigma > 0:
        jitter = np.clip(rng.normal(0.0, sigma, x.shape), -clip, clip)
        out += jitter.astype(x.dtype)
    return out


def evaluate(model: PointSetModel, x: np.ndarray, y: np.ndarray,
             batch: int = 128) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) without augmentation."""
    losses = []
    correct = 0
    for lo in range(0, len(x), batch):
        xb = x[lo:lo + batch]
        yb = y[lo:lo + batch]
        logits, _ = _forward_batch(model, xb, want_cache=False)
        probs = _softmax64(logits)
        losses.append(-np.log(probs[np.arange(len(yb)), yb]).sum())
        correct += int((probs.argmax(axis=1) == yb).sum())
    return float(np.sum(losses) / len(x)), correct / len(x)


def train(train_clouds, train_labels, test_clouds, test_labels, classes,
          config: TrainConfig = TrainConfig()):
    """Momentum SGD on mean cross-entropy; deterministic for a given seed.

    Clouds are resampled to config.n_points and unit-sphere normalized up
    front; yaw/jitter augmentation is drawn fresh every epoch.  Returns
    (model, history) where history holds one dict per epoch with train and
    test loss/accuracy.
    """
    classes = tuple(classes)
    y_train = np.asarray(train_labels, dtype=np.int64)
    y_test = np.asarray(test_labels, dtype=np.int64)
    counts = np.bincount(y_train, minlength=len(classes))
    if len(classes) < 2:
        raise TrainingError("need at least 2 classes")
    if np.any(counts == 0):
        empty = [classes[i] for i in np.flatnonzero(counts == 0)]
        raise TrainingError(f"classes without training samples: {empty}")

    rng = np.random.default_rng(config.seed)
    x_train = _canonicalize(train_clouds, config.n_points, rng)
    x_test = _canonicalize(test_clouds, config.n_points, rng)
    model = init_model(classes, n_points=config.n_points,
                       point_widths=config.point_widths,
                       head_hidden=config.head_hidden, rng=rng)
    velocity = [np.zeros_like(p) for p in model.parameters()]

    history = []
    for epoch in range(config.epochs):
        lr = config.lr * (config.lr_decay ** (epoch // config.decay_every))
        perm = rng.permutation(len(x_train))
        epoch_loss = 0.0
        epoch_correct = 0.0
        for lo in range(0, len(perm), config.batch):
            idx = perm[lo:lo + config.batch]
            xb = x_train[idx]
            if config.augment:
                xb = _augment_batch(xb, rng, config.augment_sigma,
                                    config.augment_clip)
            loss, grads, acc = loss_and_grads(model, xb, y_train[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch} "
                    f"(lr={lr}); aborting")
            flat = grads["pw"] + grads["pb"] + grads["hw"] + grads["hb"]
            for vel, param, grad in zip(velocity, model.parameters(), flat):
                vel *= config.momentum
                vel -= lr * grad
                param += vel
            epoch_loss += loss * len(idx)
            epoch_correct += acc * len(idx)
        test_loss, test_acc = evaluate(model, x_test, y_test)
        history.append({
            "epoch": epoch, "lr": lr,
            "train_loss": epoch_loss / len(x_train),
            "train_acc": epoch_correct / len(x_train),
            "test_loss": test_loss, "test_acc": test_acc,
        })
    model.meta = {"seed": config.seed, "epochs": config.epochs}
    return model, history


# ---------------------------------------------------------------------------
# Gated prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    classes: tuple[str, ...]
    probabilities: np.ndarray
    label: str
    confidence: float
    accepted: bool


def gate(probabilities: np.ndarray, classes, threshold: float = 0.85) -> Prediction:
    """Build a Prediction; accepted iff max probability strictly exceeds threshold."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    best = int(probabilities.argmax())
    confidence = float(probabilities[best])
    return Prediction(classes=tuple(classes), probabilities=probabilities,
                      label=tuple(classes)[best], confidence=confidence,
                      accepted=confidence > threshold)


def predict_gated(model: PointSetModel, cloud: np.ndarray,
                  threshold: float = 0.85,
                  rng: np.random.Generator | None = None) -> Prediction:
    """Canonicalize a raw segment cloud and classify it with gating.

    Resamples to the model's point count (seeded), normalizes to the unit
    sphere, and rejects predictions whose confidence does not exceed the
    threshold; rejected objects fall back to their geometric description.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    pts = normalize_unit_sphere(resample_points(cloud, model.n_points, rng))
    return gate(forward(model, pts), model.classes, threshold)


# ---------------------------------------------------------------------------
# Model serialization (flat binary, little-endian)
# ---------------------------------------------------------------------------

def save_model(model: PointSetModel) -> bytes:
    """MODEL_MAGIC | u32 n_points | classes | point/head layer shapes | f32 data."""
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<I", model.n_points)
    out += struct.pack("<I", len(model.classes))
    for name in model.classes:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    for group_w in (model.point_weights, model.head_weights):
        out += struct.pack("<I", len(group_w))
        for w in group_w:
            out += struct.pack("<II", w.shape[0], w.shape[1])
    for w, b in zip(model.point_weights + model.head_weights,
                    model.point_biases + model.head_biases):
        out += np.ascontiguousarray(w, dtype="<f4").tobytes()
        out += np.ascontiguousarray(b, dtype="<f4").tobytes()
    return bytes(out)


def load_model(blob: bytes) -> PointSetModel:
    if blob[:4] != MODEL_MAGIC:
        raise ValueError("not a model file")
    pos = 4

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ValueError("truncated model file")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    n_points, = unpack("<I")
    n_classes, = unpack("<I")
    classes = []
    for _ in range(n_classes):
        ln, = unpack("<H")
        classes.append(blob[pos:pos + ln].decode("utf-8"))
        pos += ln
    shapes = []
    for _ in range(2):
        n_layers, = unpack("<I")
        shapes.append([unpack("<II") for _ in range(n_layers)])

    def read_array(count):
        nonlocal pos
        size = 4 * count
        if pos + size > len(blob):
            raise ValueError("truncated model file")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).copy()
        pos += size
        return arr

    weights = [[], []]
    biases = [[], []]
    for gi, group in enumerate(shapes):
        for n_in, n_out in group:
            weights[gi].append(read_array(n_in * n_out).reshape(n_in, n_out))
            biases[gi].append(read_array(n_out))
    return PointSetModel(classes=tuple(classes), n_points=n_points,
                         point_weights=weights[0], point_biases=biases[0],
                         head_weights=weights[1], head_biases=biases[1])
