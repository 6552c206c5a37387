"""Minimal baseline TIFF codec for single-channel 8/16-bit rasters.

Writes little-endian, uncompressed, single-strip grayscale TIFF with the
acquisition metadata (pixel size in micrometers, imaging channel) stored as
``key=value`` lines in the ImageDescription tag, so a read immediately after
a write reproduces the ``Image`` bit for bit.  The reader is deliberately
strict: anything it cannot represent raises :class:`TiffFormatError` naming
the offending field.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import TiffFormatError
from .imaging import Channel, Image

_II = b"II"
_MM = b"MM"
_MAGIC = 42

# field types
_BYTE, _ASCII, _SHORT, _LONG, _RATIONAL = 1, 2, 3, 4, 5
_TYPE_SIZE = {_BYTE: 1, _ASCII: 1, _SHORT: 2, _LONG: 4, _RATIONAL: 8}

# tags
_IMAGE_WIDTH = 256
_IMAGE_LENGTH = 257
_BITS_PER_SAMPLE = 258
_COMPRESSION = 259
_PHOTOMETRIC = 262
_IMAGE_DESCRIPTION = 270
_STRIP_OFFSETS = 273
_SAMPLES_PER_PIXEL = 277
_ROWS_PER_STRIP = 278
_STRIP_BYTE_COUNTS = 279


def _format_description(img: Image) -> bytes:
    text = f"pixel_size_um={img.pixel_size!r}\nchannel={img.channel.value}\n"
    return text.encode("ascii") + b"\x00"


def _parse_description(raw: bytes) -> tuple[float, Channel]:
    pixel_size, channel = 1.0, Channel.BF
    try:
        text = raw.rstrip(b"\x00").decode("ascii")
    except UnicodeDecodeError:
        raise TiffFormatError("ImageDescription is not ASCII") from None
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        if key == "pixel_size_um":
            try:
                pixel_size = float(value)
            except ValueError:
                raise TiffFormatError(
                    f"ImageDescription pixel_size_um value {value!r} is not a number"
                ) from None
        elif key == "channel":
            try:
                channel = Channel(value)
            except ValueError:
                raise TiffFormatError(
                    f"ImageDescription channel value {value!r} is not a known channel"
                ) from None
    if not pixel_size > 0:
        raise TiffFormatError(f"ImageDescription pixel_size_um must be > 0, got {pixel_size}")
    return pixel_size, channel


def encode_tiff(img: Image) -> bytes:
    """Serialize an Image to an in-memory TIFF stream."""
    h, w = img.height, img.width
    pixel_bytes = np.ascontiguousarray(img.pixels, dtype=f"<u{img.bit_depth // 8}").tobytes()
    desc = _format_description(img)

    data_offset = 8
    ifd_offset = data_offset + len(pixel_bytes)
    if ifd_offset % 2:
        pixel_bytes += b"\x00"
        ifd_offset += 1

    entries = [
        (_IMAGE_WIDTH, _LONG, 1, w),
        (_IMAGE_LENGTH, _LONG, 1, h),
        (_BITS_PER_SAMPLE, _SHORT, 1, img.bit_depth),
        (_COMPRESSION, _SHORT, 1, 1),
        (_PHOTOMETRIC, _SHORT, 1, 1),
        (_IMAGE_DESCRIPTION, _ASCII, len(desc), None),  # placed after the IFD
        (_STRIP_OFFSETS, _LONG, 1, data_offset),
        (_SAMPLES_PER_PIXEL, _SHORT, 1, 1),
        (_ROWS_PER_STRIP, _LONG, 1, h),
        (_STRIP_BYTE_COUNTS, _LONG, 1, h * w * (img.bit_depth // 8)),
    ]
    ifd_size = 2 + 12 * len(entries) + 4
    desc_offset = ifd_offset + ifd_size

    out = bytearray()
    out += _II + struct.pack("<HI", _MAGIC, ifd_offset)
    out += pixel_bytes
    out += struct.pack("<H", len(entries))
    for tag, ftype, count, value in entries:
        if tag == _IMAGE_DESCRIPTION:
            if count <= 4:
                packed = desc.ljust(4, b"\x00")
            else:
                packed = struct.pack("<I", desc_offset)
        elif ftype == _SHORT:
            packed = struct.pack("<HH", value, 0)
        else:
            packed = struct.pack("<I", value)
        out += struct.pack("<HHI", tag, ftype, count) + packed
    out += struct.pack("<I", 0)  # no further IFDs
    if len(desc) > 4:
        out += desc
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        if len(data) < 8:
            raise TiffFormatError("header is shorter than 8 bytes")
        order = data[:2]
        if order == _II:
            self.end = "<"
        elif order == _MM:
            self.end = ">"
        else:
            raise TiffFormatError(f"byte-order mark {order!r} is not II or MM")
        magic, self.ifd_offset = struct.unpack(self.end + "HI", data[2:8])
        if magic != _MAGIC:
            raise TiffFormatError(f"magic number is {magic}, expected {_MAGIC}")

    def unpack(self, fmt: str, offset: int, size: int):
        if offset + size > len(self.data):
            raise TiffFormatError(f"offset {offset} reads past end of stream")
        return struct.unpack(self.end + fmt, self.data[offset : offset + size])

    def read_ifd(self) -> dict[int, tuple[int, int, bytes]]:
        off = self.ifd_offset
        (count,) = self.unpack("H", off, 2)
        fields: dict[int, tuple[int, int, bytes]] = {}
        for i in range(count):
            base = off + 2 + 12 * i
            tag, ftype, n = self.unpack("HHI", base, 8)
            if ftype not in _TYPE_SIZE:
                raise TiffFormatError(f"tag {tag} has unsupported field type {ftype}")
            size = _TYPE_SIZE[ftype] * n
            if size <= 4:
                raw = self.data[base + 8 : base + 8 + size]
            else:
                (value_off,) = self.unpack("I", base + 8, 4)
                if value_off + size > len(self.data):
                    raise TiffFormatError(f"tag {tag} value offset {value_off} reads past end")
                raw = self.data[value_off : value_off + size]
            # Some writers emit a second ImageDescription; the first one wins.
            fields.setdefault(tag, (ftype, n, raw))
        return fields

    def values(self, fields, tag: int, name: str, default=None) -> list[int]:
        if tag not in fields:
            if default is not None:
                return default
            raise TiffFormatError(f"required tag {name} is missing")
        ftype, n, raw = fields[tag]
        if ftype == _SHORT:
            return list(struct.unpack(self.end + "H" * n, raw))
        if ftype == _LONG:
            return list(struct.unpack(self.end + "I" * n, raw))
        if ftype == _BYTE:
            return list(raw)
        raise TiffFormatError(f"tag {name} has non-integer field type {ftype}")


def decode_tiff(data: bytes) -> Image:
    """Parse a TIFF stream; raises TiffFormatError naming any offending field."""
    reader = _Reader(data)
    fields = reader.read_ifd()

    (width,) = reader.values(fields, _IMAGE_WIDTH, "ImageWidth")
    (height,) = reader.values(fields, _IMAGE_LENGTH, "ImageLength")
    if width <= 0 or height <= 0:
        raise TiffFormatError(f"image dimensions {width}x{height} are not positive")
    bits = reader.values(fields, _BITS_PER_SAMPLE, "BitsPerSample", default=[8])
    if len(set(bits)) != 1 or bits[0] not in (8, 16):
        raise TiffFormatError(f"BitsPerSample {bits} is not uniform 8 or 16")
    (compression,) = reader.values(fields, _COMPRESSION, "Compression", default=[1])
    if compression != 1:
        raise TiffFormatError(f"Compression {compression} is not uncompressed (1)")
    (photometric,) = reader.values(fields, _PHOTOMETRIC, "PhotometricInterpretation")
    if photometric not in (0, 1):
        raise TiffFormatError(f"PhotometricInterpretation {photometric} is not grayscale (0 or 1)")
    (samples,) = reader.values(fields, _SAMPLES_PER_PIXEL, "SamplesPerPixel", default=[1])
    if samples != 1:
        raise TiffFormatError(f"SamplesPerPixel {samples} is not 1")

    offsets = reader.values(fields, _STRIP_OFFSETS, "StripOffsets")
    counts = reader.values(fields, _STRIP_BYTE_COUNTS, "StripByteCounts")
    if len(offsets) != len(counts):
        raise TiffFormatError(
            f"StripOffsets has {len(offsets)} entries but StripByteCounts has {len(counts)}"
        )
    expected = width * height * (bits[0] // 8)
    if sum(counts) != expected:
        raise TiffFormatError(
            f"StripByteCounts total {sum(counts)} does not match image size {expected}"
        )
    strips = []
    for off, cnt in zip(offsets, counts):
        if off + cnt > len(data):
            raise TiffFormatError(f"StripOffsets entry {off} reads past end of stream")
        strips.append(data[off : off + cnt])
    raw = b"".join(strips)

    if _IMAGE_DESCRIPTION in fields:
        ftype, n, desc_raw = fields[_IMAGE_DESCRIPTION]
        if ftype != _ASCII:
            raise TiffFormatError(f"ImageDescription has field type {ftype}, expected ASCII")
        pixel_size, channel = _parse_description(desc_raw)
    else:
        pixel_size, channel = 1.0, Channel.BF

    dtype = np.dtype(reader.end + f"u{bits[0] // 8}")
    pixels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return Image(pixels.astype(f"u{bits[0] // 8}"), pixel_size, channel)


def read_tiff_dimensions(path: str | Path) -> tuple[int, int]:
    """(height, width) from the header alone, without loading pixel data."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise TiffFormatError("header is shorter than 8 bytes")
        if head[:2] == _II:
            end = "<"
        elif head[:2] == _MM:
            end = ">"
        else:
            raise TiffFormatError(f"byte-order mark {head[:2]!r} is not II or MM")
        magic, ifd_offset = struct.unpack(end + "HI", head[2:8])
        if magic != _MAGIC:
            raise TiffFormatError(f"magic number is {magic}, expected {_MAGIC}")
        fh.seek(ifd_offset)
        count_raw = fh.read(2)
        if len(count_raw) < 2:
            raise TiffFormatError("IFD offset reads past end of stream")
        (count,) = struct.unpack(end + "H", count_raw)
        entries = fh.read(12 * count)
    width = height = None
    for i in range(count):
        tag, ftype, _n = struct.unpack(end + "HHI", entries[12 * i : 12 * i + 8])
        raw = entries[12 * i + 8 : 12 * i + 12]
        if tag in (_IMAGE_WIDTH, _IMAGE_LENGTH):
            if ftype == _SHORT:
                (value,) = struct.unpack(end + "H", raw[:2])
            elif ftype == _LONG:
                (value,) = struct.unpack(end + "I", raw)
            else:
                raise TiffFormatError(f"tag {tag} has non-integer field type {ftype}")
            if tag == _IMAGE_WIDTH:
                width = value
            else:
                height = value
    if width is None:
        raise TiffFormatError("required tag ImageWidth is missing")
    if height is None:
        raise TiffFormatError("required tag ImageLength is missing")
    return height, width


def write_tiff(path: str | Path, img: Image) -> None:
    Path(path).write_bytes(encode_tiff(img))


def read_tiff(path: str | Path) -> Image:
    return decode_tiff(Path(path).read_bytes())


# Aliases matching the imperative operation names used elsewhere in the API.
save_tiff = write_tiff
load_tiff = read_tiff
