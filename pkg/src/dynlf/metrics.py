"""Image quality metrics (PSNR, SSIM, MS-SSIM) and lossless 8-bit image I/O.

Images are float arrays of shape (H, W, 3) with values in [0, 1]; 8-bit
quantization happens only at file boundaries. LPIPS is intentionally absent
(it needs a pretrained perceptual network); reports carry a placeholder
column instead.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as _PILImage, UnidentifiedImageError
from scipy.signal import convolve2d


class DimensionMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


class IoError(OSError):
    pass


class MalformedFile(ValueError):
    pass


PSNR_CAP = 99.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.min() < -1e-9 or img.max() > 1 + 1e-9:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return np.clip(img, 0.0, 1.0)


def _check_pair(a, b):
    a = check_image(a, "a")
    b = check_image(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB on peak-1 float images, capped at 99."""
    a, b = _check_pair(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / err))


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_maps(a, b, window):
    """Per-position (ssim, contrast-structure) maps, averaged over channels."""
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    ssim_acc = []
    cs_acc = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = convolve2d(x, window, mode="valid")
        mu_y = convolve2d(y, window, mode="valid")
        xx = convolve2d(x * x, window, mode="valid") - mu_x ** 2
        yy = convolve2d(y * y, window, mode="valid") - mu_y ** 2
        xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y
        cs = (2 * xy + c2) / (xx + yy + c2)
        lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
        ssim_acc.append(lum * cs)
        cs_acc.append(cs)
    return np.mean(ssim_acc), np.mean(cs_acc)


def ssim(a, b):
    """Single-scale SSIM with an 11x11 Gaussian window, sigma 1.5, peak 1 data."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < 11:
        raise TooSmall("ssim needs images at least 11 pixels on a side")
    s, _ = _ssim_maps(a, b, _gaussian_window())
    return float(s)


def _downsample2(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim_scales(shape):
    """How many dyadic scales a (H, W) image supports (capped at the standard 5)."""
    m = 0
    side = min(shape[0], shape[1])
    while side >= 11 and m < 5:
        m += 1
        side //= 2
    return m


def ms_ssim(a, b):
    """Multi-scale SSIM, standard 5 scales when the image is large enough.

    Smaller images fall back to the first m supported scales with the
    weights renormalized to sum 1.
    """
    a, b = _check_pair(a, b)
    m = ms_ssim_scales(a.shape)
    if m < 1:
        raise TooSmall("ms_ssim needs at least 11 pixels on a side")
    weights = np.asarray(MS_SSIM_WEIGHTS[:m])
    weights = weights / weights.sum()
    window = _gaussian_window()
    vals = []
    x, y = a, b
    for scale in range(m):
        s, cs = _ssim_maps(x, y, window)
        vals.append(s if scale == m - 1 else cs)
        if scale != m - 1:
            x = _downsample2(x)
            y = _downsample2(y)
    vals = np.maximum(np.asarray(vals), 0.0)  # negative terms would break the product
    return float(np.prod(vals ** weights))


# ---------------------------------------------------------------------------
# file I/O (PNG, 8-bit RGB)
# ---------------------------------------------------------------------------


def to_uint8(img):
    img = check_image(img)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw):
    return np.asarray(raw, dtype=np.float64) / 255.0


def encode_png(img):
    """PNG bytes for a float image (8-bit quantization happens here)."""
    import io
    buf = io.BytesIO()
    _PILImage.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(blob):
    import io
    try:
        with _PILImage.open(io.BytesIO(blob)) as im:
            return from_uint8(np.asarray(im.convert("RGB")))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise MalformedFile(f"cannot decode image: {exc}") from exc


def encode_png_gray(img2d):
    """PNG bytes for a single-channel float image in [0, 1]."""
    import io
    raw = np.clip(np.round(np.asarray(img2d, dtype=np.float64) * 255.0), 0, 255)
    buf = io.BytesIO()
    _PILImage.fromarray(raw.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_image(path, img):
    try:
        with open(path, "wb") as fh:
            fh.write(encode_png(img))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_image(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_png(blob)
