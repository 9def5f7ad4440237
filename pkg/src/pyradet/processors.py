# processors.py - PyRaDet File Format Processors
# Copyright (C) 2026 PyRaDet contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Reading and writing the on-disk formats.

Handles raw little-endian float32 map files, the dataset manifest, JSON-lines
detection files and the versioned binary checkpoint format.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .metadata import CHECKPOINT_MAGIC, CHECKPOINT_VERSION

MANIFEST_NAME = 'manifest.json'
MANIFEST_VERSION = 1

# Raw map views stored for every frame, and their shape keys in the geometry
FRAME_VIEWS = ('ra', 'rd', 'ad')

_F32 = np.dtype('<f4')
_F64 = np.dtype('<f8')

# One default 64x64x64 block of values per read
CHECKSUM_CHUNK_VALUES = 64 ** 3


# ==================== Raw float32 files ====================

def f32_checksum(filepath, chunk_values=CHECKSUM_CHUNK_VALUES):
    """
    SHA256 of a raw float32 map file, streamed through one reusable float32 buffer.

    The digest covers the same bytes write_f32 hashed, so it is comparable with
    the manifest entry. A trailing partial value is hashed as well and shows up
    as a mismatch.

    Args:
        filepath: Path to a .f32 file
        chunk_values: Number of float32 values read per block

    Returns:
        Hexadecimal checksum string, or None if the file doesn't exist
    """
    if not os.path.isfile(filepath):
        return None
    if chunk_values < 1:
        raise ValueError(f'f32_checksum: chunk_values must be positive, got {chunk_values}')
    digest = hashlib.sha256()
    buffer = memoryview(np.empty(chunk_values, dtype=_F32)).cast('B')
    with open(filepath, 'rb') as f:
        while True:
            n_bytes = f.readinto(buffer)
            if not n_bytes:
                break
            digest.update(buffer[:n_bytes])
    return digest.hexdigest()


def write_f32(filepath, values):
    """
    Write an array as headerless little-endian float32, row-major.

    Returns:
        SHA256 checksum of the written bytes
    """
    payload = np.ascontiguousarray(values, dtype=_F32).tobytes(order='C')
    with open(filepath, 'wb') as f:
        f.write(payload)
    return hashlib.sha256(payload).hexdigest()


def read_f32(filepath, shape, record_id=None):
    """
    Read a headerless float32 file and reshape it.

    Args:
        filepath: Path to the .f32 file
        shape: Expected array shape
        record_id: Frame id used in error messages

    Returns:
        float64 ndarray of the given shape

    Raises:
        FileNotFoundError: If the file is missing
        ValueError: If the byte length does not match the shape
    """
    label = record_id or os.path.basename(filepath)
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Frame '{label}': missing file {filepath}")
    expected = int(np.prod(shape)) * _F32.itemsize
    actual = os.path.getsize(filepath)
    if actual != expected:
        raise ValueError(
            f"Frame '{label}': {os.path.basename(filepath)} has {actual} bytes, "
            f"expected {expected} for shape {tuple(shape)}"
        )
    values = np.fromfile(filepath, dtype=_F32)
    return values.reshape(shape).astype(np.float64)


def view_shapes(geometry):
    """Shapes of the RA, RD and AD views of a geometry."""
    return {
        'ra': (geometry.r_bins, geometry.a_bins),
        'rd': (geometry.r_bins, geometry.d_bins),
        'ad': (geometry.a_bins, geometry.d_bins),
    }


def write_frame_files(directory, frame_id, frame):
    """
    Write the three views of a frame as <id>_{ra,rd,ad}.f32.

    Returns:
        Tuple (files dict view -> file name, checksums dict view -> sha256)
    """
    files = {}
    checksums = {}
    for view in FRAME_VIEWS:
        name = f'{frame_id}_{view}.f32'
        checksums[view] = write_f32(os.path.join(directory, name), getattr(frame, view))
        files[view] = name
    return files, checksums


# ==================== Manifest ====================

def write_manifest(directory, manifest):
    """Write manifest.json with sorted keys so identical content gives identical bytes."""
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write('\n')
    return path


def read_manifest(directory):
    """
    Read and validate manifest.json.

    Raises:
        FileNotFoundError: If the dataset has no manifest
        ValueError: If required keys are missing or frame ids repeat
    """
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f'No {MANIFEST_NAME} in dataset directory {directory}')
    try:
        with open(path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f'Corrupt manifest {path}: {e}') from e

    for key in ('format_version', 'geometry', 'splits', 'sequences'):
        if key not in manifest:
            raise ValueError(f"Manifest {path} is missing required key '{key}'")
    if manifest['format_version'] > MANIFEST_VERSION:
        raise ValueError(f"Manifest format_version {manifest['format_version']} is newer than "
                         f'supported version {MANIFEST_VERSION}')

    sequence_ids = set()
    frame_ids = set()
    for sequence in manifest['sequences']:
        sequence_ids.add(sequence['id'])
        for record in sequence['frames']:
            for key in ('id', 'files', 'annotations'):
                if key not in record:
                    raise ValueError(f"Manifest record '{record.get('id', '?')}' is missing '{key}'")
            if record['id'] in frame_ids:
                raise ValueError(f"Manifest lists frame '{record['id']}' twice")
            frame_ids.add(record['id'])
            missing = [view for view in FRAME_VIEWS if view not in record['files']]
            if missing:
                raise ValueError(f"Manifest record '{record['id']}' has no file for views {missing}")
    for split, ids in manifest['splits'].items():
        unknown = [seq_id for seq_id in ids if seq_id not in sequence_ids]
        if unknown:
            raise ValueError(f"Split '{split}' references unknown sequences {unknown}")
    return manifest


# ==================== JSON lines ====================

def write_jsonl(filepath, records):
    """Write one JSON object per line, keys sorted."""
    with open(filepath, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write('\n')
    return filepath


def read_jsonl(filepath):
    with open(filepath, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


# ==================== Checkpoints ====================

def write_checkpoint(filepath, header, tensors):
    """
    Write a versioned binary checkpoint.

    Layout: magic (8 bytes), version (uint32 LE), header length (uint64 LE),
    header JSON (utf-8), then per tensor: name length (uint32), name,
    ndim (uint32), dims (uint64 each), data (float64 LE, row-major).
    Tensors are written in sorted name order.

    Args:
        filepath: Output path
        header: JSON-serialisable dict (model config, extra metadata)
        tensors: Dict name -> ndarray
    """
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(filepath, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', CHECKPOINT_VERSION))
        f.write(struct.pack('<Q', len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack('<I', len(tensors)))
        for name in sorted(tensors):
            values = np.ascontiguousarray(tensors[name], dtype=_F64)
            encoded = name.encode('utf-8')
            f.write(struct.pack('<I', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<I', values.ndim))
            for dim in values.shape:
                f.write(struct.pack('<Q', dim))
            f.write(values.tobytes(order='C'))
    return filepath


def _read_exact(f, n, filepath):
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f'Checkpoint {filepath} is truncated')
    return data


def read_checkpoint(filepath):
    """
    Read a checkpoint written by write_checkpoint.

    Returns:
        Tuple (header dict, dict name -> float64 ndarray)

    Raises:
        FileNotFoundError: If the file is missing
        ValueError: If the magic, version or layout is wrong
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f'Checkpoint not found: {filepath}')
    tensors = {}
    with open(filepath, 'rb') as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f'{filepath} is not a checkpoint file (bad magic)')
        (version,) = struct.unpack('<I', _read_exact(f, 4, filepath))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f'Checkpoint {filepath} has version {version}, expected {CHECKPOINT_VERSION}')
        (header_len,) = struct.unpack('<Q', _read_exact(f, 8, filepath))
        header = json.loads(_read_exact(f, header_len, filepath).decode('utf-8'))
        (count,) = struct.unpack('<I', _read_exact(f, 4, filepath))
        for _ in range(count):
            (name_len,) = struct.unpack('<I', _read_exact(f, 4, filepath))
            name = _read_exact(f, name_len, filepath).decode('utf-8')
            (ndim,) = struct.unpack('<I', _read_exact(f, 4, filepath))
            shape = tuple(struct.unpack('<Q', _read_exact(f, 8, filepath))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, size * _F64.itemsize, filepath)
            tensors[name] = np.frombuffer(raw, dtype=_F64).reshape(shape).astype(np.float64)
        if f.read(1):
            raise ValueError(f'Checkpoint {filepath} has trailing bytes')
    return header, tensors
