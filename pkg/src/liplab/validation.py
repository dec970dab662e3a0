"""Input validation helpers.

All image-like data flows through the toolkit as plain numpy arrays:
grayscale images are (H, W), RGB images (H, W, 3), binary masks (H, W)
with values in {0, 1}, landmark sets (N, 2) float arrays of (x, y)
pixel coordinates (origin top-left, x rightward, y downward).  The
checkers below normalize dtypes and raise early with a readable message
instead of letting shape errors surface deep inside an algorithm.
"""

import numpy as np


def check_gray_image(img, min_size=1, name="image"):
    """Validate a single-channel image and return it as float32 (H, W)."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a single-channel (H, W) array, got shape {arr.shape}")
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise ValueError(f"{name}: needs at least {min_size}x{min_size} pixels, got {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float32)


def check_rgb_image(img, name="image"):
    """Validate a 3-channel image and return it as float32 (H, W, 3)."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name}: expected an (H, W, 3) array, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float32)


def check_mask(mask, name="mask"):
    """Validate a binary mask and return it as uint8 (H, W) with values in {0, 1}."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected an (H, W) array, got shape {arr.shape}")
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"{name}: values must be 0 or 1, found {uniq[:8]}")
    return arr.astype(np.uint8)


def check_same_shape(a, b, name_a="first", name_b="second"):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {name_a} is {a.shape}, {name_b} is {b.shape}")


def check_points(points, min_points=1, name="points"):
    """Validate an ordered (N, 2) array of float (x, y) coordinates."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name}: expected an (N, 2) array of (x, y), got shape {arr.shape}")
    if arr.shape[0] < min_points:
        raise ValueError(f"{name}: needs at least {min_points} points, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: coordinates must be finite")
    return arr


def check_finite(arr, name="array"):
    """Reject NaN/Inf values at a module boundary."""
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    return arr
