"""Grad-CAM: class-specific spatial importance heatmaps from the deepest
spatially resolved feature map, plus a PPM overlay writer."""

from dataclasses import dataclass

import numpy as np

from .data import encode_ppm, resize_bilinear


@dataclass
class Heatmap:
    values: np.ndarray  # [H,W] in [0,1]
    layer: str
    class_index: int


def default_target_layer(model):
    """The last shape-preserving block's output; falls back to the stage
    preceding the head convolution."""
    name = None
    for stage_name, _ in model.stages:
        if stage_name.startswith("dfseb"):
            name = stage_name
    if name is None:
        for i, (stage_name, _) in enumerate(model.stages):
            if stage_name == "head_conv" and i > 0:
                return model.stages[i - 1][0]
        raise ValueError("no feature stage to target")
    return name


def gradcam(model, image, class_index, layer=None):
    """Heatmap of evidence for `class_index` in `image` (eval mode).

    Channel weights are the spatial means of the target logit's gradient at
    the chosen feature layer; the weighted feature sum is ReLU-clipped,
    bilinearly upsampled to the input resolution, and max-normalized. The
    all-zero map is returned untouched when every contribution is negative.
    """
    layer = layer if layer is not None else default_target_layer(model)
    logits, outputs = model.forward_collect(image, train=False)
    classes = logits.shape[1]
    if not isinstance(class_index, (int, np.integer)) or not 0 <= class_index < classes:
        raise ValueError(f"class index {class_index!r} outside [0, {classes})")
    if layer not in outputs:
        raise KeyError(f"no stage named {layer!r}")
    dlogits = np.zeros_like(logits)
    dlogits[:, class_index] = 1.0
    dfeat = model.backward(dlogits, upto=layer)
    feat = outputs[layer]
    weights = dfeat.mean(axis=(2, 3))  # [N, C]
    cam = np.maximum(np.einsum("c,chw->hw", weights[0].astype(np.float64),
                               feat[0].astype(np.float64)), 0.0)
    up = resize_bilinear(cam[None, None], image.shape[2])[0, 0]
    peak = up.max()
    if peak > 0:
        up = up / peak
    return Heatmap(values=up.astype(np.float64), layer=layer,
                   class_index=int(class_index))


def colormap(values):
    """Blue-to-red linear colormap: [H,W] in [0,1] -> [3,H,W] in [0,255]."""
    v = np.clip(values, 0.0, 1.0)
    r = 255.0 * v
    g = np.zeros_like(v)
    b = 255.0 * (1.0 - v)
    return np.stack([r, g, b])


def overlay(heatmap, original, out_path):
    """Write 0.5*original + 0.5*colormapped(heatmap) as a PPM file.

    `original` is [1,3,T,T] with values in [0,255] at the same resolution
    as the heatmap.
    """
    h, w = heatmap.values.shape
    if original.shape[2] != h or original.shape[3] != w:
        raise ValueError(f"resolution mismatch: heatmap {h}x{w} vs image "
                         f"{original.shape[2]}x{original.shape[3]}")
    blend = 0.5 * original[0].astype(np.float64) + 0.5 * colormap(heatmap.values)
    with open(out_path, "wb") as fh:
        fh.write(encode_ppm(blend[None]))
