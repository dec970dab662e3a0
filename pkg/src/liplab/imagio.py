"""Bit-exact file I/O: binary PGM/PPM images, landmark CSVs, and raw
float32 tensor files.

Images are numpy arrays: (H, W) uint8 for grayscale, (H, W, 3) uint8 for
RGB, row-major with the origin at the top-left corner (x grows rightward,
y downward).  Only the binary netpbm variants (P5/P6) with maxval 255 are
supported; writers emit a canonical header (single spaces, newline after
each field) so that write -> read -> write is byte-identical.

Tensor files carry arbitrary-rank float32 arrays:

    magic     8 bytes   b"LIPLAB01"
    ndim      u32 little-endian
    dims      ndim * u32 little-endian
    payload   prod(dims) * f32 little-endian, row-major

Landmark files are plain CSV lines ``name,x,y`` with float pixel
coordinates; order is meaningful and names must be unique.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .validation import check_points

TENSOR_MAGIC = b"LIPLAB01"

# ITU-R BT.601 luma weights.
_GRAY_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# netpbm (binary PGM / PPM)
# ---------------------------------------------------------------------------

class _HeaderScanner:
    """Tokenizer for netpbm headers that tracks the current byte offset."""

    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, message):
        raise FormatError(message, path=self.path, offset=self.pos)

    def skip_whitespace(self):
        # '#' starts a comment running to end of line.
        while self.pos < len(self.data):
            c = self.data[self.pos:self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if nl < 0 else nl + 1
            else:
                return

    def next_token(self):
        self.skip_whitespace()
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos:self.pos + 1].isspace():
            self.pos += 1
        if self.pos == start:
            self.fail("unexpected end of header")
        return self.data[start:self.pos]

    def next_int(self, what):
        tok = self.next_token()
        try:
            value = int(tok)
        except ValueError:
            self.fail(f"expected integer for {what}, got {tok!r}")
        if value <= 0:
            self.fail(f"{what} must be positive, got {value}")
        return value


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    scan = _HeaderScanner(data, path)
    if data[:2] != magic:
        scan.fail(f"bad magic, expected {magic.decode()}")
    scan.pos = 2
    width = scan.next_int("width")
    height = scan.next_int("height")
    maxval_pos = scan.pos
    maxval = scan.next_int("maxval")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)", path=path, offset=maxval_pos)
    # Exactly one whitespace byte separates the header from the raster.
    if scan.pos >= len(data) or not data[scan.pos:scan.pos + 1].isspace():
        scan.fail("missing whitespace before raster")
    scan.pos += 1
    expected = width * height * channels
    raster = data[scan.pos:scan.pos + expected]
    if len(raster) < expected:
        raise FormatError(
            f"truncated raster, expected {expected} bytes, got {len(raster)}",
            path=path, offset=scan.pos + len(raster),
        )
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def _write_netpbm(path, img, magic, channels):
    arr = np.asarray(img)
    expect_ndim = 2 if channels == 1 else 3
    if arr.ndim != expect_ndim or (channels == 3 and arr.shape[2] != 3):
        raise ValueError(f"expected a {channels}-channel image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("pixel values outside [0, 255] cannot be stored")
        arr = np.round(arr).astype(np.uint8)
    height, width = arr.shape[:2]
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_pgm(path):
    """Read a binary PGM (P5) file into a (H, W) uint8 array."""
    return _read_netpbm(path, b"P5", 1)


def write_pgm(path, img):
    """Write a (H, W) array as binary PGM with a canonical header."""
    _write_netpbm(path, img, b"P5", 1)


def read_ppm(path):
    """Read a binary PPM (P6) file into a (H, W, 3) uint8 array."""
    return _read_netpbm(path, b"P6", 3)


def write_ppm(path, img):
    """Write a (H, W, 3) array as binary PPM with a canonical header."""
    _write_netpbm(path, img, b"P6", 3)


def read_mask_pgm(path):
    """Read a PGM file as a binary mask: any nonzero pixel is foreground."""
    return (read_pgm(path) > 0).astype(np.uint8)


def write_mask_pgm(path, mask):
    """Write a {0,1} mask as a 0/255 PGM so it is viewable directly."""
    arr = np.asarray(mask)
    write_pgm(path, (arr > 0).astype(np.uint8) * 255)


# ---------------------------------------------------------------------------
# color conversion
# ---------------------------------------------------------------------------

def to_grayscale(img):
    """Convert an (H, W, 3) image to float32 grayscale in [0, 255].

    Uses the BT.601 luma weights 0.299 R + 0.587 G + 0.114 B, accumulated
    in float64 so a gray pixel (v, v, v) maps back to v.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    r, g, b = _GRAY_WEIGHTS
    gray = r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]
    return gray.astype(np.float32)


# ---------------------------------------------------------------------------
# tensor files
# ---------------------------------------------------------------------------

def write_tensor(path, tensor):
    """Serialize a float32 array; round-trips bit-exactly via read_tensor."""
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path):
    """Read a tensor file back into a float32 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != TENSOR_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}", path=path, offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", path=path, offset=len(data))
    (ndim,) = struct.unpack_from("<I", data, 8)
    if ndim == 0 or ndim > 32:
        raise FormatError(f"implausible ndim {ndim}", path=path, offset=8)
    dims_end = 12 + 4 * ndim
    if len(data) < dims_end:
        raise FormatError("truncated dims", path=path, offset=len(data))
    dims = struct.unpack_from(f"<{ndim}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64))
    payload = data[dims_end:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"payload mismatch: dims {dims} need {4 * count} bytes, got {len(payload)}",
            path=path, offset=dims_end,
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


# ---------------------------------------------------------------------------
# landmark files
# ---------------------------------------------------------------------------

@dataclass
class LandmarkSet:
    """Ordered, named 2D points in pixel coordinates."""

    names: list[str]
    points: np.ndarray  # (N, 2) float64, columns (x, y)

    def __post_init__(self):
        self.points = check_points(self.points, min_points=1, name="landmarks")
        if len(self.names) != len(self.points):
            raise ValueError(
                f"{len(self.names)} names for {len(self.points)} points"
            )
        seen = set()
        for name in self.names:
            if name in seen:
                raise FormatError(f"duplicate landmark name {name!r}")
            seen.add(name)

    def __len__(self):
        return len(self.points)


def read_landmarks(path):
    """Parse a ``name,x,y`` CSV file into a LandmarkSet (file order kept)."""
    names, coords = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise FormatError(f"line {lineno}: expected 'name,x,y', got {line!r}", path=path)
            name, xs, ys = parts
            try:
                coords.append((float(xs), float(ys)))
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric coordinate in {line!r}", path=path)
            names.append(name)
    if not names:
        raise FormatError("no landmarks", path=path)
    try:
        return LandmarkSet(names, np.array(coords, dtype=np.float64))
    except FormatError as exc:
        raise FormatError(str(exc), path=path) from None


def write_landmarks(path, landmarks):
    """Write a LandmarkSet as ``name,x,y``.

    Coordinates use the shortest decimal form that parses back to the
    same float64, so write/read round trips are exact.
    """
    with open(path, "w", encoding="ascii") as fh:
        for name, (x, y) in zip(landmarks.names, landmarks.points):
            fh.write(f"{name},{float(x)!r},{float(y)!r}\n")
