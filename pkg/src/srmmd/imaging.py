"""Binary PPM (P6, maxval 255) I/O and particle-flow colour transfer."""

from dataclasses import dataclass

import numpy as np

from .errors import PpmFormatError

__all__ = ["PpmImage", "read_ppm", "write_ppm", "parse_ppm", "encode_ppm", "recolor", "quantize"]

_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass
class PpmImage:
    """8-bit RGB image stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must have shape (height, width, 3), got {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255) or np.any(px != np.round(px)):
                raise ValueError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = np.ascontiguousarray(px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def num_pixels(self):
        return self.height * self.width

    def colors(self):
        """Pixel colours in [0, 1]^3 as a (height*width, 3) array, row-major."""
        return self.pixels.reshape(-1, 3) / 255.0

    def __eq__(self, other):
        return isinstance(other, PpmImage) and np.array_equal(self.pixels, other.pixels)


def _next_token(data, pos):
    # skip whitespace and comments, then read one header token
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PpmFormatError("unexpected end of header", offset=start)
    return data[start:pos], start, pos


def _header_int(data, pos, name):
    tok, start, pos = _next_token(data, pos)
    if not tok.isdigit():
        raise PpmFormatError(f"expected {name} as a decimal integer, got {tok[:16]!r}", offset=start)
    return int(tok), start, pos


def parse_ppm(data):
    """Decode P6 bytes into a :class:`PpmImage`."""
    data = bytes(data)
    if data[:2] != b"P6":
        raise PpmFormatError("missing P6 magic number", offset=0)
    pos = 2
    if len(data) > 2 and data[2:3] not in _WHITESPACE and data[2:3] != b"#":
        raise PpmFormatError("magic number must be followed by whitespace", offset=2)
    width, size_at, pos = _header_int(data, pos, "width")
    height, _, pos = _header_int(data, pos, "height")
    maxval, maxval_at, pos = _header_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PpmFormatError(f"image size {width}x{height} must be positive", offset=size_at)
    if maxval != 255:
        raise PpmFormatError(f"unsupported maxval {maxval}; only 255 is supported", offset=maxval_at)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise PpmFormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height * 3
    body = data[pos:]
    if len(body) < expected:
        raise PpmFormatError(
            f"truncated pixel data: expected {expected} bytes, found {len(body)}", offset=len(data))
    if len(body) > expected:
        raise PpmFormatError("trailing bytes after pixel data", offset=pos + expected)
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return PpmImage(pixels.copy())


def encode_ppm(img):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_ppm(path):
    with open(path, "rb") as fh:
        return parse_ppm(fh.read())


def write_ppm(img, path):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def quantize(colors):
    """Map colours in [0, 1] to 8-bit values: clamp, then round half up."""
    c = np.clip(np.asarray(colors, dtype=float), 0.0, 1.0)
    return np.floor(c * 255.0 + 0.5).astype(np.uint8)


def _nearest(points, centers, chunk=1024):
    # exact squared differences; argmin resolves ties to the lowest index
    out = np.empty(len(points), dtype=np.int64)
    for a in range(0, len(points), chunk):
        diff = points[a:a + chunk, None, :] - centers[None, :, :]
        out[a:a + chunk] = np.argmin((diff**2).sum(-1), axis=1)
    return out


def recolor(image, initial, transported):
    """Replace each pixel colour by the transported colour of its nearest initial particle."""
    initial = np.asarray(initial, dtype=float)
    transported = np.asarray(transported, dtype=float)
    flat = image.pixels.reshape(-1, 3)
    unique, inverse = np.unique(flat, axis=0, return_inverse=True)
    idx = _nearest(unique / 255.0, initial)
    new_unique = quantize(transported[idx])
    return PpmImage(new_unique[inverse.reshape(-1)].reshape(image.pixels.shape))
