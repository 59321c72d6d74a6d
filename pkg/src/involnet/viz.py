"""Exporters for involution kernel maps, class mean images and result tables."""
import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .images import to_bytes, write_ppm
from .involution import Involution

# relative spread below which a map counts as constant
DEGENERATE_RTOL = 1e-12


def minmax_to_bytes(values):
    """Scale to 0..255 by min-max. Constant (degenerate) input maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo <= DEGENERATE_RTOL * max(1.0, abs(hi), abs(lo)):
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def kernel_field(model, image, layer_index):
    """Kernel field ``(H, W, K*K, G)`` generated by ``model.layers[layer_index]``."""
    layer = model.layers[layer_index] if 0 <= layer_index < len(model.layers) else None
    if not isinstance(layer, Involution):
        raise IndexError(f"layer {layer_index} is not an involution layer")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    for lyr in model.layers[:layer_index + 1]:
        x = lyr.forward(x, train=False)
    return layer.last_kernels[0]


def kernel_norm_map(model, image, layer_index):
    field = kernel_field(model, image, layer_index)
    return np.sqrt((field ** 2).sum(axis=(2, 3)))


def export_kernel_norm_map(model, image, layer_index, out):
    pixels = minmax_to_bytes(kernel_norm_map(model, image, layer_index))
    write_ppm(out, pixels)
    return pixels


def kernel_grid(model, image, layer_index, grid=6):
    """Tile the K x K kernels at an evenly spaced ``grid x grid`` set of pixels,
    separated by 1-px white lines. Each tile is min-max normalised on its own."""
    field = kernel_field(model, image, layer_index)
    h, w, taps, _ = field.shape
    k = int(round(np.sqrt(taps)))
    rows = np.round(np.linspace(0, h - 1, grid)).astype(int)
    cols = np.round(np.linspace(0, w - 1, grid)).astype(int)
    side = grid * k + (grid - 1)
    canvas = np.full((side, side), 255, dtype=np.uint8)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            tile = field[i, j, :, 0].reshape(k, k)
            r0, c0 = a * (k + 1), b * (k + 1)
            canvas[r0:r0 + k, c0:c0 + k] = minmax_to_bytes(tile)
    return canvas


def export_kernel_grid(model, image, layer_index, out, grid=6):
    canvas = kernel_grid(model, image, layer_index, grid)
    write_ppm(out, canvas)
    return canvas


def export_mean_images(mean_asd, mean_td, out_dir):
    out_dir = Path(out_dir)
    write_ppm(out_dir / "mean_ASD.ppm", to_bytes(mean_asd))
    write_ppm(out_dir / "mean_TD.ppm", to_bytes(mean_td))


@dataclass
class ReportRow:
    dataset: str
    variant: str
    accuracy: float
    recall: float
    f1: float
    params: int
    size_mb: float


REPORT_COLUMNS = ("dataset", "variant", "accuracy", "recall", "f1", "params", "size_mb")


def report_row(dataset, variant, metrics, params, size_mb):
    return ReportRow(dataset, variant, round(float(metrics.accuracy), 4),
                     round(float(metrics.recall), 4), round(float(metrics.f1), 4),
                     int(params), round(float(size_mb), 2))


def report_json(rows):
    return json.dumps([asdict(r) for r in rows], indent=2) + "\n"


def report_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(asdict(r))
    return buf.getvalue()


def export_report(rows, out):
    """Write ``<out>.json`` and ``<out>.csv``; ``out`` may carry either suffix."""
    if not rows:
        raise ValueError("report needs at least one row")
    base = Path(out)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    json_path, csv_path = base.with_suffix(".json"), base.with_suffix(".csv")
    json_path.write_text(report_json(rows))
    csv_path.write_text(report_csv(rows))
    return json_path, csv_path
