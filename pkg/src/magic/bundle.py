"""Self-describing binary container for every persisted artifact.

Layout:
    magic bytes  b"MGBD"
    u32 LE       format version
    u8 + bytes   kind string (ascii)
    u32 LE       section count
    32 bytes     sha256 of the concatenated section payloads
    sections     u64 LE length + raw bytes each

Section 0 is a UTF-8 JSON document; numeric arrays are hoisted into their
own sections as raw little-endian bytes and referenced from the JSON as
{"__array__": index, "dtype": ..., "shape": [...]}, so every real number is
stored as a 64-bit little-endian value and round-trips bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .data import (MultimodalScene, ObjectFeature, ReferenceSet, SceneSet,
                   Sentence, SentenceCorpus, TextToken, Vocabulary)

MAGIC_BYTES = b"MGBD"
FORMAT_VERSION = 1


class BundleError(Exception):
    """Base class for container failures."""


class BundleIOError(BundleError):
    """Filesystem-level failure while reading or writing."""


class BundleFormatError(BundleError):
    """Not a bundle, or structurally truncated."""


class BundleVersionError(BundleError):
    """Bundle written by an incompatible format version."""


class BundleChecksumError(BundleError):
    """Payload bytes do not match the recorded digest."""


class BundleKindError(BundleError):
    """Bundle holds a different kind of object than requested."""


# ---------------------------------------------------------------------------
# Value <-> (json tree, array sections)

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _encode_value(value, arrays: list[bytes]):
    if isinstance(value, np.ndarray):
        arr = np.ascontiguousarray(value)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        else:
            raise BundleFormatError(f"unsupported array dtype {arr.dtype}")
        arrays.append(arr.tobytes())
        return {"__array__": len(arrays) - 1, "dtype": arr.dtype.str, "shape": list(arr.shape)}
    if isinstance(value, dict):
        return {str(k): _encode_value(v, arrays) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode_value(v, arrays) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    raise BundleFormatError(f"unsupported value type {type(value).__name__}")


def _decode_value(tree, sections: list[bytes]):
    if isinstance(tree, dict):
        if "__array__" in tree:
            raw = sections[tree["__array__"]]
            dtype = _DTYPES[tree["dtype"]]
            return np.frombuffer(raw, dtype=dtype).reshape(tree["shape"]).copy()
        return {k: _decode_value(v, sections) for k, v in tree.items()}
    if isinstance(tree, list):
        return [_decode_value(v, sections) for v in tree]
    return tree


# ---------------------------------------------------------------------------
# Object payloads per kind

def _scene_to_tree(scene: MultimodalScene):
    return {
        "scene_id": scene.scene_id,
        "objects": [{"feature": o.feature, "box": o.box, "label_id": o.label_id}
                    for o in scene.objects],
        "tokens": [{"feature": t.feature, "surface": t.surface, "box": t.box}
                   for t in scene.tokens],
    }


def _scene_from_tree(tree) -> MultimodalScene:
    return MultimodalScene(
        objects=[ObjectFeature(feature=o["feature"], box=o["box"], label_id=int(o["label_id"]))
                 for o in tree["objects"]],
        tokens=[TextToken(feature=t["feature"], surface=t["surface"], box=t["box"])
                for t in tree["tokens"]],
        scene_id=tree["scene_id"],
    )


def _payload(obj):
    if isinstance(obj, SceneSet):
        return "scene_set", {"seed": obj.seed, "scenes": [_scene_to_tree(s) for s in obj.scenes]}
    if isinstance(obj, MultimodalScene):
        return "scene", _scene_to_tree(obj)
    if isinstance(obj, ReferenceSet):
        return "references", {"seed": obj.seed, "references": obj.references}
    if isinstance(obj, SentenceCorpus):
        return "corpus", {
            "grammar_seed": obj.grammar_seed,
            "max_len": obj.max_len,
            "sentences": [{"surfaces": list(s.surfaces), "copy_mask": [int(b) for b in s.copy_mask]}
                          for s in obj.sentences],
        }
    if isinstance(obj, Vocabulary):
        return "vocabulary", {"words": list(obj.words), "embeddings": obj.embeddings}
    if isinstance(obj, dict) and all(isinstance(v, np.ndarray) for v in obj.values()):
        return "tensors", {"names": sorted(obj), "tensors": {k: obj[k] for k in sorted(obj)}}
    # late import: the model type lives above this module
    from .alignment import CaptionModel
    if isinstance(obj, CaptionModel):
        return "model", obj.to_tree()
    raise BundleFormatError(f"do not know how to bundle {type(obj).__name__}")


def _restore(kind: str, tree):
    if kind == "scene_set":
        return SceneSet(scenes=[_scene_from_tree(t) for t in tree["scenes"]], seed=int(tree["seed"]))
    if kind == "scene":
        return _scene_from_tree(tree)
    if kind == "references":
        refs = {k: list(v) for k, v in tree["references"].items()}
        return ReferenceSet(references=refs, seed=int(tree["seed"]))
    if kind == "corpus":
        sentences = [Sentence(surfaces=tuple(s["surfaces"]),
                              copy_mask=tuple(bool(b) for b in s["copy_mask"]))
                     for s in tree["sentences"]]
        return SentenceCorpus(sentences=sentences, grammar_seed=int(tree["grammar_seed"]),
                              max_len=int(tree["max_len"]))
    if kind == "vocabulary":
        return Vocabulary(words=tuple(tree["words"]), embeddings=tree["embeddings"])
    if kind == "tensors":
        return {name: tree["tensors"][name] for name in tree["names"]}
    if kind == "model":
        from .alignment import CaptionModel
        return CaptionModel.from_tree(tree)
    raise BundleKindError(f"unknown bundle kind {kind!r}")


# ---------------------------------------------------------------------------
# File I/O

def save_bundle(path, obj) -> None:
    kind, tree = _payload(obj)
    arrays: list[bytes] = []
    meta = json.dumps(_encode_value(tree, arrays), sort_keys=True).encode("utf-8")
    sections = [meta] + arrays

    digest = hashlib.sha256()
    for sec in sections:
        digest.update(sec)

    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC_BYTES)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            kind_bytes = kind.encode("ascii")
            fh.write(struct.pack("<B", len(kind_bytes)))
            fh.write(kind_bytes)
            fh.write(struct.pack("<I", len(sections)))
            fh.write(digest.digest())
            for sec in sections:
                fh.write(struct.pack("<Q", len(sec)))
                fh.write(sec)
    except OSError as exc:
        raise BundleIOError(f"cannot write bundle {path}: {exc}") from exc


def read_bundle_kind(path) -> str:
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
            if head != MAGIC_BYTES:
                raise BundleFormatError(f"{path}: not a bundle")
            fh.read(4)
            (klen,) = struct.unpack("<B", fh.read(1))
            return fh.read(klen).decode("ascii")
    except OSError as exc:
        raise BundleIOError(f"cannot read bundle {path}: {exc}") from exc


def load_bundle(path, expected_kind: str | None = None):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise BundleIOError(f"cannot read bundle {path}: {exc}") from exc

    view = memoryview(blob)
    if len(view) < 4 or bytes(view[:4]) != MAGIC_BYTES:
        raise BundleFormatError(f"{path}: not a bundle")
    offset = 4

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise BundleFormatError(f"{path}: truncated bundle")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise BundleVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (klen,) = struct.unpack("<B", take(1))
    kind = bytes(take(klen)).decode("ascii")
    (n_sections,) = struct.unpack("<I", take(4))
    stored_digest = bytes(take(32))

    sections = []
    digest = hashlib.sha256()
    for _ in range(n_sections):
        (length,) = struct.unpack("<Q", take(8))
        sec = bytes(take(length))
        digest.update(sec)
        sections.append(sec)
    if digest.digest() != stored_digest:
        raise BundleChecksumError(f"{path}: checksum mismatch")

    if expected_kind is not None and kind != expected_kind:
        raise BundleKindError(f"{path}: holds {kind!r}, expected {expected_kind!r}")

    tree = _decode_value(json.loads(sections[0].decode("utf-8")), sections[1:])
    return _restore(kind, tree)
