"""Blue-to-yellow heatmaps of species fields as PNG."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from PIL.PngImagePlugin import PngInfo

from .grid import SpeciesState

LOW_RGB = np.array([0x1F, 0x3B, 0x99], dtype=float)
HIGH_RGB = np.array([0xFF, 0xD2, 0x1F], dtype=float)
LABEL_HEIGHT = 14


def colorize(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Map an ``(nx, ny)`` field to an ``(ny, nx, 3)`` uint8 image, y upward."""
    span = vmax - vmin
    t = np.zeros_like(values) if span <= 0 else np.clip((values - vmin) / span, 0.0, 1.0)
    rgb = LOW_RGB + t[..., None] * (HIGH_RGB - LOW_RGB)
    # field is indexed [i=x, j=y]; images are [row, col] with row 0 on top
    return np.round(rgb).astype(np.uint8).transpose(1, 0, 2)[::-1]


def _species_index(state: SpeciesState, species) -> int:
    if isinstance(species, int):
        return species
    if species not in state.names:
        raise KeyError(f"unknown species {species!r}; available: {', '.join(state.names)}")
    return state.names.index(species)


def range_caption(name: str, vmin: float, vmax: float) -> str:
    return f"{name} [{vmin:.4g}, {vmax:.4g}] nM"


def _panel(values, vmin, vmax, upscale, caption) -> Image.Image:
    img = colorize(values, vmin, vmax)
    img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    h, w, _ = img.shape
    canvas = Image.new("RGB", (max(w, 120), h + LABEL_HEIGHT), "white")
    canvas.paste(Image.fromarray(img, "RGB"), (0, 0))
    ImageDraw.Draw(canvas).text((2, h + 1), caption, fill="black", font=ImageFont.load_default())
    return canvas


def render_heatmap(state: SpeciesState, species, out=None, upscale: int = 4,
                   compare: SpeciesState | None = None) -> bytes:
    """Render one species; with ``compare`` the achieved field (left) and the
    comparison field (right) share one colour range. Returns PNG bytes and
    writes them to ``out`` if given."""
    idx = _species_index(state, species)
    fields = [state.values[idx]]
    if compare is not None:
        fields.append(compare.values[_species_index(compare, state.names[idx])])
    vmin = min(float(f.min()) for f in fields)
    vmax = max(float(f.max()) for f in fields)
    caption = range_caption(state.names[idx], vmin, vmax)
    panels = [_panel(f, vmin, vmax, upscale, caption) for f in fields]
    width = sum(p.width for p in panels) + 4 * (len(panels) - 1)
    sheet = Image.new("RGB", (width, panels[0].height), "white")
    x = 0
    for p in panels:
        sheet.paste(p, (x, 0))
        x += p.width + 4
    info = PngInfo()
    info.add_text("range", caption)
    buf = io.BytesIO()
    sheet.save(buf, format="PNG", optimize=False, pnginfo=info)
    data = buf.getvalue()
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(data)
    return data
