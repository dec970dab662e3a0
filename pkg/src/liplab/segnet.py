"""Attention UNet assembly, two-stage sequential training, autoencoder.

The segmentation network is a 4-level UNet whose skip connections pass
through additive attention gates.  Two of them run in sequence: stage 1
maps the 5-channel texture input to a probability map, stage 2 takes that
single-channel map and refines it, trained with stage 1 frozen.  A small
convolutional autoencoder (for mask compression) shares the layer set.

All parameters live in flat dicts of named Tensors so the optimizer,
serializer, and gradient checker can treat any network uniformly.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .errors import FormatError, NumericalError
from .imagio import read_tensor, write_tensor
from .texture import LbpParams, build_input

_LEVELS = 4


@dataclass
class AUNetSpec:
    """Architecture hyperparameters for one attention UNet."""

    in_channels: int = 5
    widths: tuple = (8, 16, 32, 64)
    input_size: tuple = (64, 64)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.input_size = tuple(int(s) for s in self.input_size)
        if len(self.widths) != _LEVELS:
            raise ValueError(f"exactly {_LEVELS} encoder widths required")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError(f"widths must be strictly increasing, got {self.widths}")
        h, w = self.input_size
        if h % 16 or w % 16:
            raise ValueError(f"input size must be divisible by 16, got {h}x{w}")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")


# named configurations: desk scale for real runs, a midget net for
# finite-difference verification, and the full-scale layout
TOY_SPEC = AUNetSpec(5, (8, 16, 32, 64), (64, 64))
GRADCHECK_SPEC = AUNetSpec(5, (2, 4, 8, 16), (16, 16))
FULL_SPEC = AUNetSpec(5, (64, 128, 256, 512), (256, 256))


@dataclass
class PipelineSpec:
    stage1: AUNetSpec = field(default_factory=lambda: AUNetSpec(in_channels=5))
    stage2: AUNetSpec = field(default_factory=lambda: AUNetSpec(in_channels=1))
    threshold: float = 0.5

    def __post_init__(self):
        if self.stage1.input_size != self.stage2.input_size:
            raise ValueError("stage input sizes must match")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")


@dataclass
class AutoencoderSpec:
    widths: tuple = (32, 64)
    input_size: tuple = (256, 256)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.input_size = tuple(int(s) for s in self.input_size)
        if len(self.widths) != 2:
            raise ValueError("autoencoder uses exactly two encoder widths")
        if self.input_size[0] % 4 or self.input_size[1] % 4:
            raise ValueError("autoencoder input size must be divisible by 4")

    @property
    def latent_shape(self):
        return (self.widths[1], self.input_size[0] // 4, self.input_size[1] // 4)


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _conv_param(params, name, cin, cout, k, rng, dtype):
    params[f"{name}.w"] = ad.Tensor(
        ad.he_uniform((cout, cin, k, k), cin * k * k, rng, dtype), requires_grad=True
    )
    params[f"{name}.b"] = ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def _convt_param(params, name, cin, cout, rng, dtype):
    params[f"{name}.w"] = ad.Tensor(
        ad.he_uniform((cin, cout, 2, 2), cin * 4, rng, dtype), requires_grad=True
    )
    params[f"{name}.b"] = ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def init_aunet(spec, rng, prefix="", dtype=np.float32):
    """He-uniform conv weights, zero biases, under `prefix.` names."""
    p = {}
    pre = f"{prefix}." if prefix else ""
    w = spec.widths
    cin = spec.in_channels
    for k in range(1, _LEVELS + 1):
        _conv_param(p, f"{pre}enc{k}", cin, w[k - 1], 3, rng, dtype)
        cin = w[k - 1]
    _conv_param(p, f"{pre}bott", w[3], 2 * w[3], 3, rng, dtype)
    deeper = 2 * w[3]
    for k in range(_LEVELS, 0, -1):
        wk = w[k - 1]
        inter = max(1, wk // 2)
        _convt_param(p, f"{pre}up{k}", deeper, wk, rng, dtype)
        _conv_param(p, f"{pre}att{k}.ws", wk, inter, 1, rng, dtype)
        _conv_param(p, f"{pre}att{k}.wg", deeper, inter, 1, rng, dtype)
        _conv_param(p, f"{pre}att{k}.psi", inter, 1, 1, rng, dtype)
        _conv_param(p, f"{pre}dec{k}", 2 * wk, wk, 3, rng, dtype)
        deeper = wk
    _conv_param(p, f"{pre}out", w[0], 1, 1, rng, dtype)
    return p


def randomize_biases(params, rng, lo=0.05, hi=0.3):
    """Move every bias off zero, in place; returns the same dict.

    Used before finite-difference gradient verification.  With zero
    biases, any relu whose receptive window is entirely dead has its
    pre-activation at exactly 0.0, so the loss is evaluated on a kink
    and a central difference measures the mean of the two one-sided
    slopes instead of the subgradient backprop reports.  Generic bias
    values keep every such pre-activation at least `lo` away from the
    kink, which is what the check's step size requires.
    """
    for name, p in params.items():
        if name.endswith(".b"):
            mag = rng.uniform(lo, hi, size=p.data.shape)
            sign = np.where(rng.uniform(size=p.data.shape) < 0.5, -1.0, 1.0)
            p.data = (mag * sign).astype(p.data.dtype)
    return params


def aunet_param_count(spec):
    """Closed-form parameter total for one AUNet."""
    w = spec.widths
    total = 0
    cin = spec.in_channels
    for k in range(_LEVELS):
        total += w[k] * cin * 9 + w[k]
        cin = w[k]
    total += 2 * w[3] * w[3] * 9 + 2 * w[3]
    deeper = 2 * w[3]
    for k in range(_LEVELS, 0, -1):
        wk = w[k - 1]
        inter = max(1, wk // 2)
        total += deeper * wk * 4 + wk                  # transposed conv
        total += inter * wk + inter                    # attention skip proj
        total += inter * deeper + inter                # attention gate proj
        total += inter + 1                             # attention psi
        total += wk * (2 * wk) * 9 + wk                # decoder conv
        deeper = wk
    total += w[0] + 1                                  # output 1x1
    return total


def forward_aunet(params, x, prefix=""):
    """Run one attention UNet; x is a Tensor (N,C,H,W); returns sigmoid probs."""
    pre = f"{prefix}." if prefix else ""

    def conv(name, t, padding="same"):
        return ad.conv2d(t, params[f"{pre}{name}.w"], params[f"{pre}{name}.b"], padding=padding)

    skips = []
    h = x
    for k in range(1, _LEVELS + 1):
        h = ad.relu(conv(f"enc{k}", h))
        skips.append(h)
        h = ad.maxpool2(h)
    h = ad.relu(conv("bott", h))
    for k in range(_LEVELS, 0, -1):
        up = ad.conv_transpose2(h, params[f"{pre}up{k}.w"], params[f"{pre}up{k}.b"])
        gated = ad.attention_gate(skips[k - 1], h, params, f"{pre}att{k}")
        h = ad.relu(conv(f"dec{k}", ad.concat_channels(up, gated)))
    return ad.sigmoid(conv("out", h, padding="valid"))


def init_autoencoder(spec, rng, prefix="ae", dtype=np.float32):
    p = {}
    w0, w1 = spec.widths
    _conv_param(p, f"{prefix}.enc1", 1, w0, 3, rng, dtype)
    _conv_param(p, f"{prefix}.enc2", w0, w1, 3, rng, dtype)
    _conv_param(p, f"{prefix}.dec1", w1, w1, 3, rng, dtype)
    _conv_param(p, f"{prefix}.dec2", w1, w0, 3, rng, dtype)
    _conv_param(p, f"{prefix}.out", w0, 1, 3, rng, dtype)
    return p


def ae_encode(params, x, prefix="ae"):
    h = ad.relu(ad.conv2d(x, params[f"{prefix}.enc1.w"], params[f"{prefix}.enc1.b"]))
    h = ad.maxpool2(h)
    h = ad.relu(ad.conv2d(h, params[f"{prefix}.enc2.w"], params[f"{prefix}.enc2.b"]))
    return ad.maxpool2(h)


def ae_decode(params, z, prefix="ae"):
    h = ad.relu(ad.conv2d(z, params[f"{prefix}.dec1.w"], params[f"{prefix}.dec1.b"]))
    h = ad.upsample2_nearest(h)
    h = ad.relu(ad.conv2d(h, params[f"{prefix}.dec2.w"], params[f"{prefix}.dec2.b"]))
    h = ad.upsample2_nearest(h)
    return ad.sigmoid(ad.conv2d(h, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"]))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    lam: float = 0.5  # BCE weight in the blended loss

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def train_stage(params, forward, inputs, targets, config, loss="bce_dice"):
    """Generic minibatch loop: Adam on the given params, seeded shuffling.

    forward(params, x_tensor) -> prediction Tensor.  Returns the list of
    per-epoch mean losses.  Aborts with epoch/batch position on NaN loss.
    """
    inputs = np.ascontiguousarray(inputs, dtype=np.float32)
    targets = np.ascontiguousarray(targets, dtype=np.float32)
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("input/target count mismatch")
    n = inputs.shape[0]
    opt = ad.Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    curve = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            sel = perm[start:start + config.batch_size]
            x = ad.Tensor(inputs[sel])
            pred = forward(params, x)
            if loss == "bce_dice":
                l = ad.loss_bce_dice(pred, targets[sel], lam=config.lam)
            elif loss == "mse":
                l = ad.loss_mse(pred, targets[sel])
            else:
                raise ValueError(f"unknown loss {loss!r}")
            lval = float(l.data)
            if not np.isfinite(lval):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {bi}")
            opt.zero_grad()
            l.backward()
            opt.step()
            total += lval * len(sel)
        curve.append(total / n)
    return curve


@dataclass
class Pipeline:
    """Two trained attention UNets plus the decision threshold."""

    spec: PipelineSpec
    params: dict  # names under s1./s2.
    seed: int = 0
    lbp: LbpParams = field(default_factory=LbpParams)

    def stage1_probs(self, inputs):
        out = forward_aunet(self.params, ad.Tensor(np.asarray(inputs, dtype=np.float32)), "s1")
        return out.data

    def stage2_probs(self, probs1):
        out = forward_aunet(self.params, ad.Tensor(np.asarray(probs1, dtype=np.float32)), "s2")
        return out.data


def init_pipeline(spec, seed=0):
    rng = np.random.default_rng(seed)
    params = init_aunet(spec.stage1, rng, "s1")
    params.update(init_aunet(spec.stage2, rng, "s2"))
    return Pipeline(spec, params, seed)


def train_pipeline(pipeline, inputs, masks, config1, config2=None):
    """Stage-wise training: stage 1 on (input, mask), then stage 2 on
    (stage-1 probabilities, mask) with stage 1 frozen.

    Returns {"stage1": curve, "stage2": curve}.
    """
    config2 = config2 if config2 is not None else config1
    masks = np.asarray(masks, dtype=np.float32)
    if masks.ndim == 3:
        masks = masks[:, None]
    s1 = {k: v for k, v in pipeline.params.items() if k.startswith("s1.")}
    s2 = {k: v for k, v in pipeline.params.items() if k.startswith("s2.")}
    curve1 = train_stage(s1, lambda p, x: forward_aunet(p, x, "s1"), inputs, masks, config1)
    probs1 = batched_forward(pipeline.params, inputs, "s1")
    curve2 = train_stage(s2, lambda p, x: forward_aunet(p, x, "s2"), probs1, masks, config2)
    return {"stage1": curve1, "stage2": curve2}


def batched_forward(params, inputs, prefix, batch_size=8):
    """Memory-bounded inference over a dataset; returns stacked probs."""
    inputs = np.asarray(inputs, dtype=np.float32)
    chunks = []
    for start in range(0, inputs.shape[0], batch_size):
        x = ad.Tensor(inputs[start:start + batch_size])
        chunks.append(forward_aunet(params, x, prefix).data)
    return np.concatenate(chunks, axis=0)


def pipeline_input(rgb, lbp_params=None, use_texture=True):
    """(H,W,3) uint8 image -> (5,H,W) f32 network input (or (3,H,W) RGB-only)."""
    if use_texture:
        planes = build_input(rgb, lbp_params)
    else:
        planes = np.asarray(rgb, dtype=np.float32) / 255.0
    return planes.transpose(2, 0, 1)


def infer(pipeline, rgb, use_texture=True):
    """Full pipeline on one RGB image: texture input, both stages, threshold.

    Returns (probability map f32 (H,W), BinaryMask uint8 (H,W)).
    """
    h, w = pipeline.spec.stage1.input_size
    rgb = np.asarray(rgb)
    if rgb.shape[:2] != (h, w):
        raise ValueError(f"expected {h}x{w} input, got {rgb.shape[0]}x{rgb.shape[1]}")
    x = pipeline_input(rgb, pipeline.lbp, use_texture)[None]
    p1 = pipeline.stage1_probs(x)
    p2 = pipeline.stage2_probs(p1)
    prob = p2[0, 0].astype(np.float32)
    return prob, (prob >= pipeline.spec.threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.json"


def save_weights(dirpath, params, meta):
    """Write each parameter as a tensor file plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for name in sorted(params):
        fname = name.replace("/", "_") + ".tf"
        write_tensor(os.path.join(dirpath, fname), params[name].data.astype(np.float32))
        entries.append({"name": name, "shape": list(params[name].data.shape), "file": fname})
    manifest = {"format": "liplab-weights-1", "meta": meta, "params": entries}
    with open(os.path.join(dirpath, _MANIFEST), "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_weights(dirpath):
    """Read a weight directory; loads everything before exposing anything,
    so a bad file cannot leave a half-populated store."""
    mpath = os.path.join(dirpath, _MANIFEST)
    try:
        with open(mpath, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError("missing manifest", path=mpath)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest: {exc}", path=mpath)
    if manifest.get("format") != "liplab-weights-1":
        raise FormatError("unrecognized weight-store format", path=mpath)
    loaded = {}
    for entry in manifest["params"]:
        fpath = os.path.join(dirpath, entry["file"])
        try:
            data = read_tensor(fpath)
        except FileNotFoundError:
            raise FormatError(f"missing weight file for parameter {entry['name']!r}", path=fpath)
        except FormatError as exc:
            raise FormatError(f"parameter {entry['name']!r}: {exc}") from exc
        if list(data.shape) != entry["shape"]:
            raise FormatError(
                f"parameter {entry['name']!r}: manifest shape {entry['shape']} "
                f"but file has {list(data.shape)}"
            )
        loaded[entry["name"]] = ad.Tensor(data, requires_grad=True)
    return loaded, manifest["meta"]


def save_pipeline(dirpath, pipeline):
    meta = {
        "kind": "pipeline",
        "seed": pipeline.seed,
        "threshold": pipeline.spec.threshold,
        "stage1": {
            "in_channels": pipeline.spec.stage1.in_channels,
            "widths": list(pipeline.spec.stage1.widths),
            "input_size": list(pipeline.spec.stage1.input_size),
        },
        "stage2": {
            "in_channels": pipeline.spec.stage2.in_channels,
            "widths": list(pipeline.spec.stage2.widths),
            "input_size": list(pipeline.spec.stage2.input_size),
        },
        "lbp": {
            "neighbors": pipeline.lbp.neighbors,
            "radius": pipeline.lbp.radius,
            "sampling": pipeline.lbp.sampling,
        },
    }
    save_weights(dirpath, pipeline.params, meta)


def load_pipeline(dirpath):
    params, meta = load_weights(dirpath)
    if meta.get("kind") != "pipeline":
        raise FormatError(f"weight store holds {meta.get('kind')!r}, not a pipeline")
    spec = PipelineSpec(
        AUNetSpec(**meta["stage1"]), AUNetSpec(**meta["stage2"]), meta["threshold"]
    )
    expected = set(init_aunet(spec.stage1, np.random.default_rng(0), "s1"))
    expected |= set(init_aunet(spec.stage2, np.random.default_rng(0), "s2"))
    if set(params) != expected:
        missing = sorted(expected - set(params))[:3]
        extra = sorted(set(params) - expected)[:3]
        raise FormatError(f"weight names do not match the architecture (missing {missing}, extra {extra})")
    pipe = Pipeline(spec, params, meta.get("seed", 0), LbpParams(**meta["lbp"]))
    return pipe


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _dice(a, b):
    inter = np.logical_and(a, b).sum(dtype=np.float64)
    s = a.sum(dtype=np.float64) + b.sum(dtype=np.float64)
    return 1.0 if s == 0 else 2.0 * inter / s


class SequentialLipSegmenter(BaseEstimator):
    """Two-stage attention-UNet segmenter with a scikit-learn surface.

    fit(X, y) takes RGB images (N,H,W,3) uint8 and masks (N,H,W) {0,1};
    predict returns masks, predict_proba the stage-2 probability maps.
    Set use_texture=False for the RGB-only ablation (3 input channels).
    """

    def __init__(self, widths=(8, 16, 32, 64), input_size=(64, 64), threshold=0.5,
                 epochs=70, epochs_stage2=130, lr=1e-3, batch_size=8, lam=0.5,
                 seed=0, use_texture=True):
        self.widths = widths
        self.input_size = input_size
        self.threshold = threshold
        self.epochs = epochs
        self.epochs_stage2 = epochs_stage2
        self.lr = lr
        self.batch_size = batch_size
        self.lam = lam
        self.seed = seed
        self.use_texture = use_texture

    def _build_inputs(self, X):
        return np.stack([pipeline_input(img, use_texture=self.use_texture) for img in X])

    def fit(self, X, y):
        in_ch = 5 if self.use_texture else 3
        spec = PipelineSpec(
            AUNetSpec(in_ch, self.widths, self.input_size),
            AUNetSpec(1, self.widths, self.input_size),
            self.threshold,
        )
        self.pipeline_ = init_pipeline(spec, self.seed)
        inputs = self._build_inputs(X)
        masks = np.asarray(y)
        c1 = TrainConfig(self.epochs, self.lr, self.batch_size, self.seed, self.lam)
        e2 = self.epochs_stage2 if self.epochs_stage2 is not None else self.epochs
        c2 = TrainConfig(e2, self.lr, self.batch_size, self.seed + 1, self.lam)
        self.loss_curves_ = train_pipeline(self.pipeline_, inputs, masks, c1, c2)
        return self

    def _check_fitted(self):
        if not hasattr(self, "pipeline_"):
            raise NotFittedError("call fit before predict")

    def predict_proba(self, X, stage=2):
        self._check_fitted()
        inputs = self._build_inputs(X)
        p1 = batched_forward(self.pipeline_.params, inputs, "s1", self.batch_size)
        if stage == 1:
            return p1[:, 0]
        p2 = batched_forward(self.pipeline_.params, p1, "s2", self.batch_size)
        return p2[:, 0]

    def predict(self, X, stage=2):
        probs = self.predict_proba(X, stage=stage)
        return (probs >= self.threshold).astype(np.uint8)

    def score(self, X, y):
        """Mean Dice over the given set."""
        preds = self.predict(X)
        return float(np.mean([_dice(p, g) for p, g in zip(preds, np.asarray(y))]))


class MaskAutoencoder(BaseEstimator, TransformerMixin):
    """Convolutional autoencoder over binary masks; transform() returns
    latent codes, inverse_transform() reconstructions."""

    def __init__(self, widths=(32, 64), input_size=(64, 64), epochs=300, lr=1e-3,
                 batch_size=4, seed=0):
        self.widths = widths
        self.input_size = input_size
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y=None):
        spec = AutoencoderSpec(self.widths, self.input_size)
        self.spec_ = spec
        rng = np.random.default_rng(self.seed)
        self.params_ = init_autoencoder(spec, rng)
        masks = self._as_batch(X)
        config = TrainConfig(self.epochs, self.lr, self.batch_size, self.seed)
        self.loss_curve_ = train_stage(
            self.params_, lambda p, x: ae_decode(p, ae_encode(p, x)), masks, masks, config, loss="mse"
        )
        return self

    def _as_batch(self, X):
        arr = np.asarray(X, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[:, None]
        return arr

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before using the autoencoder")

    def transform(self, X):
        self._check_fitted()
        return ae_encode(self.params_, ad.Tensor(self._as_batch(X))).data

    def inverse_transform(self, Z):
        self._check_fitted()
        return ae_decode(self.params_, ad.Tensor(np.asarray(Z, dtype=np.float32))).data[:, 0]

    def reconstruct(self, X):
        return self.inverse_transform(self.transform(X))
