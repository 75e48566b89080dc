"""Binary checkpoint container.

Layout: magic "MMKD", u16 version, then a sequence of sections, each a
4-byte ASCII tag, u64 payload length and the payload. All integers and
floats little-endian. A model checkpoint is the two sections ARCH
(canonical architecture text) and PARM (float64 parameter vector) in
that order; MEMS (episodic-memory snapshot) and EMBD (embedding dump
for golden-file comparisons) are optional extras in the same container.
Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .memory import EpisodicMemory
from .network import ArchSpec, ModelState

MAGIC = b"MMKD"
VERSION = 1


class FormatError(ValueError):
    """Malformed or out-of-bounds container data."""


def pack_container(sections) -> bytes:
    """Assemble [(tag, payload), ...] into container bytes."""
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for tag, payload in sections:
        tag_bytes = tag.encode("ascii")
        if len(tag_bytes) != 4:
            raise ValueError(f"section tag must be 4 ASCII bytes, got {tag!r}")
        parts.append(tag_bytes)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def unpack_container(blob) -> list:
    """Parse container bytes back into [(tag, payload), ...]."""
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    sections = []
    offset = 6
    while offset < len(blob):
        if offset + 12 > len(blob):
            raise FormatError("truncated section header")
        tag = blob[offset : offset + 4].decode("ascii")
        (length,) = struct.unpack_from("<Q", blob, offset + 4)
        offset += 12
        if offset + length > len(blob):
            raise FormatError(f"section {tag!r} overruns the file")
        sections.append((tag, blob[offset : offset + length]))
        offset += length
    return sections


def _sections_dict(sections):
    out = {}
    for tag, payload in sections:
        if tag in out:
            raise FormatError(f"duplicate section {tag!r}")
        out[tag] = payload
    return out


# ---------------------------------------------------------------------------
# model checkpoints


def model_to_sections(model: ModelState):
    return [
        ("ARCH", model.arch.to_text().encode("utf-8")),
        ("PARM", np.ascontiguousarray(model.params, dtype="<f8").tobytes()),
    ]


def model_from_sections(sections, rng_seed=0) -> ModelState:
    found = _sections_dict(sections)
    if "ARCH" not in found or "PARM" not in found:
        raise FormatError("container lacks ARCH/PARM sections")
    arch = ArchSpec.from_text(found["ARCH"].decode("utf-8"))
    params = np.frombuffer(found["PARM"], dtype="<f8").astype(np.float64)
    if params.shape != (arch.num_params,):
        raise FormatError(
            f"PARM holds {params.shape[0]} values, arch needs {arch.num_params}"
        )
    return ModelState(params=params, arch=arch, rng_seed=rng_seed)


def save_model(path, model: ModelState, memory: EpisodicMemory | None = None) -> None:
    sections = model_to_sections(model)
    if memory is not None:
        sections.append(("MEMS", memory_to_bytes(memory)))
    with open(path, "wb") as fh:
        fh.write(pack_container(sections))


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        return model_from_sections(unpack_container(fh.read()))


def load_memory(path) -> EpisodicMemory:
    with open(path, "rb") as fh:
        found = _sections_dict(unpack_container(fh.read()))
    if "MEMS" not in found:
        raise FormatError("container lacks a MEMS section")
    return memory_from_bytes(found["MEMS"])


# ---------------------------------------------------------------------------
# episodic-memory snapshots (section MEMS)


def memory_to_bytes(memory: EpisodicMemory) -> bytes:
    parts = [struct.pack("<II", memory.per_task_capacity, len(memory.slots))]
    for task in sorted(memory.slots):
        ring = memory.slots[task]
        if ring:
            c, h, w = ring[0][0].shape
            k = ring[0][1].shape[0]
        else:
            c = h = w = k = 0
        parts.append(
            struct.pack(
                "<IIIQ4I",
                task,
                len(ring),
                memory.cursors.get(task, 0),
                memory.seen.get(task, 0),
                c, h, w, k,
            )
        )
        for image, label in ring:
            parts.append(np.ascontiguousarray(image, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(label, dtype="<f8").tobytes())
    return b"".join(parts)


def memory_from_bytes(blob) -> EpisodicMemory:
    capacity, n_tasks = struct.unpack_from("<II", blob, 0)
    memory = EpisodicMemory(capacity)
    offset = 8
    for _ in range(n_tasks):
        task, count, cursor, seen, c, h, w, k = struct.unpack_from("<IIIQ4I", blob, offset)
        offset += struct.calcsize("<IIIQ4I")
        if count > capacity:
            raise FormatError(f"MEMS: ring for task {task} exceeds capacity")
        ring = []
        for _ in range(count):
            image = np.frombuffer(blob, dtype="<f8", count=c * h * w, offset=offset)
            offset += c * h * w * 8
            label = np.frombuffer(blob, dtype="<f8", count=k, offset=offset)
            offset += k * 8
            ring.append((image.reshape(c, h, w).copy(), label.copy()))
        memory.slots[task] = ring
        memory.cursors[task] = cursor
        memory.seen[task] = seen
    if offset != len(blob):
        raise FormatError("MEMS: trailing bytes after last ring")
    return memory


# ---------------------------------------------------------------------------
# embedding dumps (section EMBD)


def embeddings_to_bytes(embeddings) -> bytes:
    """Serialize a list of MultiScaleEmbedding for golden-file tests."""
    parts = [struct.pack("<I", len(embeddings))]
    for emb in embeddings:
        parts.append(struct.pack("<II", emb.layer, len(emb.scales)))
        for scale, regions in emb.scales:
            parts.append(struct.pack("<II", scale, len(regions)))
            for region in regions:
                arr = np.ascontiguousarray(region.data.data, dtype="<f8")
                parts.append(struct.pack("<III", region.height, region.width, arr.ndim))
                parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
                parts.append(arr.tobytes())
    return b"".join(parts)
