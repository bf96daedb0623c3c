"""Bit-exact volume file I/O.

Two containers are supported:

* the native ``.vol`` container: a fixed 64-byte header (magic ``DPAV``,
  version, datakind, dims, spacing, num_labels) followed by the raw
  little-endian payload, x-fastest;
* a NIfTI-1 subset: 348-byte header, magic ``n+1\\0`` (single file) or
  ``ni1\\0`` (header + sibling ``.img``), datatypes uint8/int16/uint16/float32,
  ``scl_slope``/``scl_inter`` honored on read and written as 1/0.

Either container may be gzip-compressed; compression is detected from the
stream, and files ending in ``.gz`` are written compressed.
"""
from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .errors import FormatError, IoError, LabelRangeError, UnsupportedDatatype
from .volume import (
    DATAKINDS,
    IntensityVolume,
    LabelVolume,
    ProbMap,
    Volume,
    VolumeHeader,
)

NATIVE_MAGIC = b"DPAV"
NATIVE_VERSION = 1
_NATIVE_HEADER = struct.Struct("<4sHH3I3dI16x")  # 64 bytes

_NIFTI_HEADER_SIZE = 348
_NIFTI_MAGICS = (b"n+1\x00", b"ni1\x00")
_NIFTI_DTYPES = {2: "u1", 4: "i2", 512: "u2", 16: "f4"}
_NIFTI_BITPIX = {2: 8, 4: 16, 512: 16, 16: 32}


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except OSError as exc:
            raise FormatError(f"corrupt gzip stream in {path}: {exc}") from exc
    return data


def _write_bytes(path, data: bytes) -> None:
    try:
        if str(path).endswith(".gz"):
            # mtime pinned so identical content gives identical bytes
            with gzip.GzipFile(path, "wb", mtime=0) as fh:
                fh.write(data)
        else:
            with open(path, "wb") as fh:
                fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _from_payload(header: VolumeHeader, payload: bytes, num_labels: int, path) -> Volume:
    expected = header.num_voxels * header.dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    voxels = np.frombuffer(payload, dtype=header.dtype).reshape(header.dims, order="F")
    try:
        if header.datakind == "label-u16":
            return LabelVolume(header, voxels, num_labels)
        if header.datakind == "intensity-f32":
            return IntensityVolume(header, voxels)
        return ProbMap(header, voxels)
    except ValueError as exc:
        if header.datakind == "label-u16":
            raise LabelRangeError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc


def _read_native(data: bytes, path) -> Volume:
    if len(data) < _NATIVE_HEADER.size:
        raise FormatError(f"{path}: truncated native header")
    magic, version, kindcode, nx, ny, nz, sx, sy, sz, num_labels = _NATIVE_HEADER.unpack(
        data[: _NATIVE_HEADER.size]
    )
    if version != NATIVE_VERSION:
        raise FormatError(f"{path}: unsupported native version {version}")
    if kindcode >= len(DATAKINDS):
        raise UnsupportedDatatype(f"{path}: unknown datakind code {kindcode}")
    try:
        header = VolumeHeader((nx, ny, nz), (sx, sy, sz), DATAKINDS[kindcode])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return _from_payload(header, data[_NATIVE_HEADER.size:], num_labels, path)


def _read_nifti(data: bytes, path, kind) -> Volume:
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", data, 0)[0] == _NIFTI_HEADER_SIZE:
            break
    else:
        raise FormatError(f"{path}: NIfTI sizeof_hdr != 348")
    magic = data[344:348]

    dim = struct.unpack_from(endian + "8h", data, 40)
    if dim[0] != 3:
        raise FormatError(f"{path}: dim[0]={dim[0]}, subset requires 3D volumes")
    datatype, bitpix = struct.unpack_from(endian + "2h", data, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype {datatype} not supported")
    if bitpix != _NIFTI_BITPIX[datatype]:
        raise FormatError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")
    pixdim = struct.unpack_from(endian + "8f", data, 76)
    spacing = pixdim[1:4]
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise FormatError(f"{path}: nonpositive pixdim {spacing}")
    vox_offset = struct.unpack_from(endian + "f", data, 108)[0]
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", data, 112)

    if magic == b"n+1\x00":
        offset = int(vox_offset)
        if offset < _NIFTI_HEADER_SIZE:
            raise FormatError(f"{path}: vox_offset {offset} inside the header")
        payload = data[offset:]
    else:
        img_path = os.path.splitext(str(path))[0] + ".img"
        payload = _read_bytes(img_path)[max(int(vox_offset), 0):]

    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: nonpositive dims {dims}")
    dtype = np.dtype(endian + _NIFTI_DTYPES[datatype])
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) < expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    raw = np.frombuffer(payload[:expected], dtype=dtype).reshape(dims, order="F")

    scaled = scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0)
    if scaled:
        raw = raw.astype(np.float64) * scl_slope + scl_inter

    is_float = datatype == 16 or scaled
    if kind is None:
        kind = "intensity" if is_float else "label"
    header = VolumeHeader(dims, spacing, {"label": "label-u16",
                                          "intensity": "intensity-f32",
                                          "prob": "prob-f32"}[kind])
    try:
        if kind == "label":
            if is_float:
                raise FormatError(f"{path}: scaled/float payload cannot be read as labels")
            if raw.min() < 0:
                raise LabelRangeError(f"{path}: negative label value {raw.min()}")
            voxels = raw.astype(np.uint16)
            return LabelVolume(header, voxels, int(voxels.max()) + 1)
        if kind == "intensity":
            return IntensityVolume(header, raw.astype(np.float32))
        return ProbMap(header, raw.astype(np.float32))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_volume(path, kind: str | None = None) -> Volume:
    """Read a volume file, dispatching on its magic bytes.

    ``kind`` may force the payload interpretation for NIfTI files, whose
    header does not carry our datakind: one of ``label``, ``intensity``,
    ``prob``. Native files always load as their stored kind.
    """
    data = _read_bytes(path)
    if data[:4] == NATIVE_MAGIC:
        return _read_native(data, path)
    if len(data) >= _NIFTI_HEADER_SIZE and data[344:348] in _NIFTI_MAGICS:
        return _read_nifti(data, path, kind)
    raise FormatError(f"{path}: unrecognized magic {data[:4]!r}")


def _native_bytes(vol: Volume) -> bytes:
    num_labels = vol.num_labels if isinstance(vol, LabelVolume) else 0
    header = _NATIVE_HEADER.pack(
        NATIVE_MAGIC,
        NATIVE_VERSION,
        DATAKINDS.index(vol.header.datakind),
        *vol.header.dims,
        *vol.header.spacing,
        num_labels,
    )
    return header + vol.voxels.tobytes(order="F")


def _nifti_bytes(vol: Volume) -> bytes:
    hdr = bytearray(_NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, _NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *vol.header.dims, 1, 1, 1, 1)
    datatype = 512 if isinstance(vol, LabelVolume) else 16
    struct.pack_into("<2h", hdr, 70, datatype, _NIFTI_BITPIX[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, *vol.header.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)   # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    descrip = b"dpatlas"
    hdr[148:148 + len(descrip)] = descrip
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00" * 4 + vol.voxels.tobytes(order="F")


def write_volume(vol: Volume, path) -> None:
    """Write a volume; ``.nii``/``.nii.gz`` paths get NIfTI, anything else native."""
    name = str(path)
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        _write_bytes(path, _nifti_bytes(vol))
    else:
        _write_bytes(path, _native_bytes(vol))
