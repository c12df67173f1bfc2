"""The confidence ranking network.

Topology, per image:

* box branch (BPN): the ``N x 5`` matrix ``[x, y, w, h, conf]`` goes through
  ``bpn_depth`` 3x5 convolutions (padding 1x2) with leaky ReLU; every layer but
  the first is residual. Features are tapped every ``interleave`` layers.
* image branch: a small conv/pool pyramid stands in for the FPN backbone.
* fusion: each tapped box feature is nearest-resized to its pyramid level and
  concatenated with the image feature, then a 3x3 lateral conv; coarser levels
  are upsampled and added into finer ones.
* confidence module, per level: 3x3 conv, global average pooling, a
  fully-connected layer to ``capacity_n`` outputs. Levels are averaged into a
  residual added to the raw confidence, and the sum is clamped to [0, 1].

The final fully-connected layers start at zero so an untrained network
returns the raw confidences unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..validation import InvalidInputError, InvalidStateError, ShapeError, check_positive_int
from . import layers as L

BOX_FIELDS = 5
BPN_KERNEL = (3, 5)
BPN_PAD = (1, 2)


@dataclass(frozen=True)
class RankerConfig:
    capacity_n: int = 64
    bpn_channels: int = 8
    bpn_depth: int = 3
    interleave: int = 2
    scales: int = 2
    fpn_channels: int = 16
    backbone_channels: tuple = (8, 16)
    image_size: int = 32
    image_channels: int = 1

    def __post_init__(self):
        for name in (
            "capacity_n",
            "bpn_channels",
            "bpn_depth",
            "interleave",
            "scales",
            "fpn_channels",
            "image_size",
            "image_channels",
        ):
            check_positive_int(getattr(self, name), name)
        chans = tuple(int(c) for c in self.backbone_channels)
        if not chans or any(c < 1 for c in chans):
            raise InvalidInputError("backbone_channels must be a non-empty list of positive integers")
        object.__setattr__(self, "backbone_channels", chans)
        if self.interleave > self.bpn_depth:
            raise InvalidInputError("interleave must not exceed bpn_depth")
        if self.scales > len(chans):
            raise InvalidInputError("scales cannot exceed the number of backbone stages")
        if self.image_size % (2 ** len(chans)):
            raise InvalidInputError(
                f"image_size {self.image_size} must be divisible by 2**{len(chans)}"
            )

    @property
    def tap_layers(self) -> list[int]:
        """1-based BPN layers whose output feeds each pyramid level, finest first."""
        taps = [l for l in range(1, self.bpn_depth + 1) if l % self.interleave == 0]
        if taps[-1] != self.bpn_depth:
            taps.append(self.bpn_depth)
        start = len(taps) - self.scales
        return [taps[max(0, start + j)] for j in range(self.scales)]

    @property
    def level_sizes(self) -> list[int]:
        n_stages = len(self.backbone_channels)
        sizes = [self.image_size >> (s + 1) for s in range(n_stages)]
        return sizes[n_stages - self.scales :]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d


def parameter_shapes(cfg: RankerConfig) -> dict[str, tuple]:
    """Every parameter name and shape, derived from the config alone."""
    kh, kw = BPN_KERNEL
    c = cfg.bpn_channels
    shapes = {}
    for l in range(cfg.bpn_depth):
        cin = 1 if l == 0 else c
        shapes[f"bpn.{l}.w"] = (c, cin, kh, kw)
        shapes[f"bpn.{l}.b"] = (c,)
    prev = cfg.image_channels
    for s, ch in enumerate(cfg.backbone_channels):
        shapes[f"backbone.{s}.w"] = (ch, prev, 3, 3)
        shapes[f"backbone.{s}.b"] = (ch,)
        prev = ch
    first = len(cfg.backbone_channels) - cfg.scales
    f = cfg.fpn_channels
    for j in range(cfg.scales):
        cb = cfg.backbone_channels[first + j]
        shapes[f"lateral.{j}.w"] = (f, cb + c, 3, 3)
        shapes[f"lateral.{j}.b"] = (f,)
        shapes[f"head.{j}.w"] = (f, f, 3, 3)
        shapes[f"head.{j}.b"] = (f,)
        shapes[f"fc.{j}.w"] = (f, cfg.capacity_n)
        shapes[f"fc.{j}.b"] = (cfg.capacity_n,)
    return shapes


@dataclass
class ForwardTrace:
    """Activations cached by :meth:`RankerNetwork.forward` for backprop."""

    version: int
    caches: dict = field(default_factory=dict)


class RankerNetwork:
    def __init__(self, config: RankerConfig | None = None, rng_seed: int = 0, parameters=None):
        self.config = config or RankerConfig()
        self.rng_seed = int(rng_seed)
        self.version = 0
        if parameters is None:
            parameters = self._init_parameters()
        self.parameters = {k: np.asarray(v, dtype=np.float64) for k, v in parameters.items()}
        self.shape_audit()

    def _init_parameters(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.rng_seed)
        params = {}
        for name, shape in parameter_shapes(self.config).items():
            if name.endswith(".b") or name.startswith("fc."):
                params[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            if name.startswith("bpn.") and name != "bpn.0.w":
                std *= 0.5  # residual branches
            params[name] = rng.normal(0.0, std, size=shape)
        return params

    def shape_audit(self) -> None:
        expected = parameter_shapes(self.config)
        if set(expected) != set(self.parameters):
            missing = sorted(set(expected) - set(self.parameters))
            extra = sorted(set(self.parameters) - set(expected))
            raise InvalidInputError(f"parameter names mismatch; missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.parameters[name].shape != shape:
                raise ShapeError(name, shape, self.parameters[name].shape)
            if not np.all(np.isfinite(self.parameters[name])):
                raise InvalidInputError(f"parameter {name} has non-finite entries")

    def bump(self) -> None:
        """Mark parameters as changed; invalidates outstanding traces."""
        self.version += 1

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters.values()))

    # -- input checks -------------------------------------------------------

    def _check_box_matrix(self, box_matrix) -> np.ndarray:
        x = np.asarray(box_matrix, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        n = self.config.capacity_n
        if x.ndim != 3 or x.shape[1:] != (n, BOX_FIELDS):
            raise ShapeError("box_matrix", (None, n, BOX_FIELDS), x.shape)
        return x

    def _check_image(self, image, batch: int) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        cfg = self.config
        if x.ndim == 3:
            x = x[None]
        expected = (batch, cfg.image_channels, cfg.image_size, cfg.image_size)
        if x.shape != expected:
            raise ShapeError("image", expected, x.shape)
        return x

    # -- forward ------------------------------------------------------------

    def bpn_forward(self, box_matrix, caches: dict | None = None) -> list[np.ndarray]:
        """Box branch; returns the tapped feature for each pyramid level."""
        x = self._check_box_matrix(box_matrix)[:, None]
        p = self.parameters
        outputs = []
        for l in range(self.config.bpn_depth):
            z, conv_c = L.conv2d_forward(x, p[f"bpn.{l}.w"], p[f"bpn.{l}.b"], BPN_PAD)
            a, act_c = L.leaky_relu_forward(z)
            x = a if l == 0 else x + a
            outputs.append(x)
            if caches is not None:
                caches[f"bpn.{l}"] = (conv_c, act_c)
        return [outputs[t - 1] for t in self.config.tap_layers]

    def backbone_forward(self, image, caches: dict | None = None) -> list[np.ndarray]:
        """Image pyramid; returns the features of the last ``scales`` stages."""
        x = image
        p = self.parameters
        feats = []
        for s in range(len(self.config.backbone_channels)):
            z, conv_c = L.conv2d_forward(x, p[f"backbone.{s}.w"], p[f"backbone.{s}.b"], (1, 1))
            a, act_c = L.leaky_relu_forward(z)
            x, pool_c = L.avgpool2_forward(a)
            feats.append(x)
            if caches is not None:
                caches[f"backbone.{s}"] = (conv_c, act_c, pool_c)
        return feats[len(feats) - self.config.scales :]

    def fuse_and_score(
        self, image_features, bpn_features, raw_conf, caches: dict | None = None
    ) -> np.ndarray:
        cfg = self.config
        p = self.parameters
        raw_conf = np.asarray(raw_conf, dtype=np.float64)
        if raw_conf.ndim == 1:
            raw_conf = raw_conf[None]
        if len(image_features) != cfg.scales or len(bpn_features) != cfg.scales:
            raise ShapeError("pyramid levels", (cfg.scales,), (len(image_features),))
        laterals = []
        for j in range(cfg.scales):
            img = image_features[j]
            size = img.shape[2:]
            box, rs_c = L.resize_nearest_forward(bpn_features[j], size)
            cat = np.concatenate([img, box], axis=1)
            lat, lat_c = L.conv2d_forward(cat, p[f"lateral.{j}.w"], p[f"lateral.{j}.b"], (1, 1))
            laterals.append(lat)
            if caches is not None:
                caches[f"fuse.{j}"] = (rs_c, img.shape[1], lat_c)
        merged = [None] * cfg.scales
        merged[-1] = laterals[-1]
        for j in range(cfg.scales - 2, -1, -1):
            merged[j] = laterals[j] + L.upsample2_forward(merged[j + 1])
        residual = 0.0
        for j in range(cfg.scales):
            z, conv_c = L.conv2d_forward(merged[j], p[f"head.{j}.w"], p[f"head.{j}.b"], (1, 1))
            a, act_c = L.leaky_relu_forward(z)
            g, gap_c = L.gap_forward(a)
            residual = residual + g @ p[f"fc.{j}.w"] + p[f"fc.{j}.b"]
            if caches is not None:
                caches[f"head.{j}"] = (conv_c, act_c, gap_c, g)
        residual = residual / cfg.scales
        if residual.shape != raw_conf.shape:
            raise ShapeError("raw_conf", residual.shape, raw_conf.shape)
        refined, clamp_c = L.clamp_forward(raw_conf + residual)
        if caches is not None:
            caches["clamp"] = clamp_c
        return refined

    def forward(self, box_matrix, image, with_trace: bool = False):
        """Refined confidences ``(B, capacity_n)``; optionally with a trace."""
        box_matrix = self._check_box_matrix(box_matrix)
        image = self._check_image(image, box_matrix.shape[0])
        caches = {} if with_trace else None
        img_feats = self.backbone_forward(image, caches)
        box_feats = self.bpn_forward(box_matrix, caches)
        refined = self.fuse_and_score(img_feats, box_feats, box_matrix[:, :, 4], caches)
        if with_trace:
            return refined, ForwardTrace(self.version, caches)
        return refined

    # -- backward -----------------------------------------------------------

    def backward(self, trace: ForwardTrace, d_refined):
        """Gradients of a scalar loss given ``d loss / d refined``.

        Returns ``(param_grads, input_grads)``; ``input_grads`` holds
        ``box_matrix`` and ``image`` gradients.
        """
        if trace.version != self.version:
            raise InvalidStateError("trace is stale: parameters changed after the forward pass")
        cfg = self.config
        p = self.parameters
        c = trace.caches
        grads = {}
        d_refined = np.asarray(d_refined, dtype=np.float64)
        if d_refined.ndim == 1:
            d_refined = d_refined[None]
        du = L.clamp_backward(d_refined, c["clamp"])
        d_raw = du.copy()
        d_res = du / cfg.scales

        d_merged = [None] * cfg.scales
        for j in range(cfg.scales):
            conv_c, act_c, gap_c, g = c[f"head.{j}"]
            grads[f"fc.{j}.w"] = g.T @ d_res
            grads[f"fc.{j}.b"] = d_res.sum(axis=0)
            dg = d_res @ p[f"fc.{j}.w"].T
            da = L.gap_backward(dg, gap_c)
            dz = L.leaky_relu_backward(da, act_c)
            dm, grads[f"head.{j}.w"], grads[f"head.{j}.b"] = L.conv2d_backward(dz, conv_c)
            d_merged[j] = dm
        # top-down merge, finest to coarsest
        for j in range(cfg.scales - 1):
            d_merged[j + 1] = d_merged[j + 1] + L.upsample2_backward(d_merged[j])
        d_img_feats, d_box_feats = [], []
        for j in range(cfg.scales):
            rs_c, n_img, lat_c = c[f"fuse.{j}"]
            dcat, grads[f"lateral.{j}.w"], grads[f"lateral.{j}.b"] = L.conv2d_backward(
                d_merged[j], lat_c
            )
            d_img_feats.append(dcat[:, :n_img])
            d_box_feats.append(L.resize_nearest_backward(dcat[:, n_img:], rs_c))

        d_box = self._bpn_backward(c, d_box_feats, grads)
        d_box[:, :, 4] += d_raw
        d_image = self._backbone_backward(c, d_img_feats, grads)
        ordered = {k: grads[k] for k in p}
        return ordered, {"box_matrix": d_box, "image": d_image}

    def _bpn_backward(self, c, d_taps, grads):
        cfg = self.config
        d_out = [None] * cfg.bpn_depth
        for j, t in enumerate(cfg.tap_layers):
            d_out[t - 1] = d_taps[j] if d_out[t - 1] is None else d_out[t - 1] + d_taps[j]
        dx = None
        for l in range(cfg.bpn_depth - 1, -1, -1):
            g = d_out[l]
            if dx is not None:
                g = dx if g is None else g + dx
            if g is None:
                dx = None
                continue
            conv_c, act_c = c[f"bpn.{l}"]
            dz = L.leaky_relu_backward(g, act_c)
            d_in, grads[f"bpn.{l}.w"], grads[f"bpn.{l}.b"] = L.conv2d_backward(dz, conv_c)
            dx = d_in if l == 0 else d_in + g
        for l in range(cfg.bpn_depth):
            grads.setdefault(f"bpn.{l}.w", np.zeros_like(self.parameters[f"bpn.{l}.w"]))
            grads.setdefault(f"bpn.{l}.b", np.zeros_like(self.parameters[f"bpn.{l}.b"]))
        return dx[:, 0]

    def _backbone_backward(self, c, d_feats, grads):
        cfg = self.config
        n_stages = len(cfg.backbone_channels)
        first = n_stages - cfg.scales
        dx = None
        for s in range(n_stages - 1, -1, -1):
            g = d_feats[s - first] if s >= first else None
            if dx is not None:
                g = dx if g is None else g + dx
            conv_c, act_c, pool_c = c[f"backbone.{s}"]
            da = L.avgpool2_backward(g, pool_c)
            dz = L.leaky_relu_backward(da, act_c)
            dx, grads[f"backbone.{s}.w"], grads[f"backbone.{s}.b"] = L.conv2d_backward(dz, conv_c)
        return dx

    def copy(self) -> "RankerNetwork":
        return RankerNetwork(
            self.config, self.rng_seed, {k: v.copy() for k, v in self.parameters.items()}
        )
