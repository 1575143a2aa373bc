"""Binary checkpoint and dataset files.

Checkpoint::

    b"WSGCKPT1" | u32 count | count x (u32 name_len, name, u32 ndims, u32 dims..., f64 data...) | u64 checksum

Tensors are written in lexicographic name order so equal stores give equal
bytes.  The checksum covers every preceding byte.

Dataset::

    b"WSGDATA1" | section*

where each section is ``tag(4) | u32 length | payload | u64 checksum`` and the
checksum covers tag, length and payload.  Tags, in file order: ``TAXO``
(taxonomy text), ``IMGS`` (boxes, features, split, canvas), ``POST``
(optional detector posteriors), ``SENT`` (tokenized phrases) and ``HIDN``
(optional hidden labels: region classes/attributes/roles and ground-truth
boxes).  Everything is little-endian; integers are unsigned 32-bit; boxes,
features and posteriors are float32.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dataset import SPLITS, GroundingDataset, HiddenLabels, ImageRecord, SentenceRecord
from .model import ParamStore

CKPT_MAGIC = b"WSGCKPT1"
DATA_MAGIC = b"WSGDATA1"
SECTION_ORDER = (b"TAXO", b"IMGS", b"POST", b"SENT", b"HIDN")
REQUIRED = (b"TAXO", b"IMGS", b"SENT")


class FormatError(ValueError):
    pass


class MagicError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedError(f"{self.what}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)


def _u32(n: int) -> bytes:
    if not 0 <= n < 2 ** 32:
        raise FormatError(f"{n} does not fit in an unsigned 32-bit field")
    return struct.pack("<I", n)


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def _f32(a: np.ndarray, what: str) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    b = a.astype("<f4")
    if not np.array_equal(b.astype(np.float64), a, equal_nan=True):
        raise FormatError(f"{what} is not exactly representable as float32")
    return b.tobytes()


# -- checkpoints ---------------------------------------------------------------

def checkpoint_bytes(params: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(CKPT_MAGIC)
    out.write(_u32(len(params)))
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        out.write(_text(name))
        out.write(_u32(arr.ndim))
        for dim in arr.shape:
            out.write(_u32(dim))
        out.write(arr.astype("<f8").tobytes())
    body = out.getvalue()
    return body + checksum(body)


def _walk_checkpoint(body: bytes) -> dict[str, np.ndarray]:
    r = _Reader(body, "checkpoint")
    r.take(len(CKPT_MAGIC))
    tensors = {}
    for _ in range(r.u32()):
        try:
            name = r.text()
        except UnicodeDecodeError:
            raise FormatError("checkpoint: tensor name is not UTF-8") from None
        shape = tuple(r.u32() for _ in range(r.u32()))
        tensors[name] = r.array("<f8", shape).astype(np.float64)
    if not r.done():
        raise FormatError(f"checkpoint: {len(body) - r.pos} trailing bytes")
    return tensors


def parse_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(CKPT_MAGIC) or data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise MagicError(f"not a checkpoint: magic {data[:len(CKPT_MAGIC)]!r}")
    if len(data) < len(CKPT_MAGIC) + 4 + 8:
        raise TruncatedError("checkpoint: truncated")
    body, tail = data[:-8], data[-8:]
    if checksum(body) != tail:
        # a short file usually fails the structural walk; anything else is corruption
        try:
            _walk_checkpoint(body)
        except TruncatedError:
            raise
        except FormatError:
            pass
        raise ChecksumError("checkpoint: checksum mismatch")
    return _walk_checkpoint(body)


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    atomic_write(path, checkpoint_bytes(params))


def load_checkpoint(path) -> ParamStore:
    """Load a checkpoint.  Extra entries (e.g. feature statistics) are kept as-is."""
    return ParamStore(parse_checkpoint(Path(path).read_bytes()))


# -- datasets ------------------------------------------------------------------

def _section(tag: bytes, payload: bytes) -> bytes:
    head = tag + _u32(len(payload))
    return head + payload + checksum(head + payload)


def _taxo(ds: GroundingDataset) -> bytes:
    return _text(ds.taxonomy_text)


def _imgs(ds: GroundingDataset) -> bytes:
    out = [_u32(len(ds.images))]
    for i, im in enumerate(ds.images):
        n, d = im.features.shape
        out += [_u32(SPLITS.index(im.split)), _f32(np.asarray(im.canvas), f"image {i} canvas"),
                _u32(n), _u32(d), _f32(im.boxes, f"image {i} boxes"), _f32(im.features, f"image {i} features")]
    return b"".join(out)


def _post(ds: GroundingDataset) -> bytes:
    out = [_u32(len(ds.images))]
    for i, im in enumerate(ds.images):
        n, k = im.posteriors.shape
        out += [_u32(n), _u32(k), _f32(im.posteriors, f"image {i} posteriors")]
    return b"".join(out)


def _sent(ds: GroundingDataset) -> bytes:
    out = [_u32(len(ds.sentences))]
    for s in ds.sentences:
        out += [_u32(s.image), _u32(len(s.phrases))]
        for p in s.phrases:
            out.append(_u32(len(p)))
            out += [_text(t) for t in p]
    return b"".join(out)


def _labels(values) -> bytes:
    # -1 ("none") is stored as 0, everything else shifted by one.
    v = np.asarray(values, dtype=np.int64) + 1
    if np.any(v < 0):
        raise FormatError("hidden label below -1")
    return _u32(len(v)) + v.astype("<u4").tobytes()


def _hidn(ds: GroundingDataset) -> bytes:
    h = ds.hidden
    out = [_u32(len(ds.images))]
    for i in range(len(ds.images)):
        out += [_labels(h.region_class[i]), _labels(h.region_attr[i]), _labels(h.region_role[i])]
    out.append(_u32(len(ds.sentences)))
    for j in range(len(ds.sentences)):
        out += [_labels(h.phrase_region[j]), _f32(np.asarray(h.phrase_boxes[j]).reshape(-1, 4), f"sentence {j} boxes")]
    return b"".join(out)


def dataset_sections(ds: GroundingDataset) -> dict[bytes, bytes]:
    """Payload per section tag, in file order."""
    out = {b"TAXO": _taxo(ds), b"IMGS": _imgs(ds)}
    if ds.has_posteriors:
        out[b"POST"] = _post(ds)
    elif any(im.posteriors is not None for im in ds.images):
        raise FormatError("posteriors must be present for every image or for none")
    out[b"SENT"] = _sent(ds)
    if ds.hidden is not None:
        out[b"HIDN"] = _hidn(ds)
    return out


def dataset_bytes(ds: GroundingDataset) -> bytes:
    return DATA_MAGIC + b"".join(_section(tag, payload) for tag, payload in dataset_sections(ds).items())


def split_sections(data: bytes) -> dict[bytes, bytes]:
    """Verify magic, order and checksums; return payload per tag."""
    if data[:len(DATA_MAGIC)] != DATA_MAGIC:
        raise MagicError(f"not a dataset: magic {data[:len(DATA_MAGIC)]!r}")
    r = _Reader(data, "dataset")
    r.take(len(DATA_MAGIC))
    sections: dict[bytes, bytes] = {}
    last = -1
    while not r.done():
        start = r.pos
        tag = r.take(4)
        length = r.u32()
        if tag not in SECTION_ORDER:
            raise ChecksumError(f"dataset: unknown section tag {tag!r} at byte {start}")
        payload = r.take(length)
        if checksum(data[start:r.pos]) != r.take(8):
            raise ChecksumError(f"dataset: section {tag.decode()} checksum mismatch")
        rank = SECTION_ORDER.index(tag)
        if rank <= last:
            raise FormatError(f"dataset: section {tag.decode()} out of order or repeated")
        last = rank
        sections[tag] = payload
    for tag in REQUIRED:
        if tag not in sections:
            raise FormatError(f"dataset: missing {tag.decode()} section")
    return sections


def _read_labels(r: _Reader) -> np.ndarray:
    return r.array("<u4", (r.u32(),)).astype(np.int64) - 1


def parse_dataset(data: bytes) -> GroundingDataset:
    sec = split_sections(data)
    try:
        return _parse_sections(sec)
    except UnicodeDecodeError as exc:
        raise FormatError(f"dataset: text is not UTF-8 ({exc.reason})") from None


def _parse_sections(sec: dict[bytes, bytes]) -> GroundingDataset:
    taxonomy_text = _Reader(sec[b"TAXO"], "TAXO").text()

    r = _Reader(sec[b"IMGS"], "IMGS")
    layout = []
    for _ in range(r.u32()):
        split = r.u32()
        if split >= len(SPLITS):
            raise FormatError(f"IMGS: bad split tag {split}")
        canvas = tuple(float(c) for c in r.array("<f4", (2,)))
        n, d = r.u32(), r.u32()
        layout.append((SPLITS[split], canvas, r.array("<f4", (n, 4)), r.array("<f4", (n, d))))
    posts = [None] * len(layout)
    if b"POST" in sec:
        r = _Reader(sec[b"POST"], "POST")
        if r.u32() != len(layout):
            raise FormatError("POST: image count differs from IMGS")
        posts = [r.array("<f4", (r.u32(), r.u32())) for _ in layout]
    images = [ImageRecord(b.astype(np.float64), f.astype(np.float64), None if p is None else p.astype(np.float64), s, c)
              for (s, c, b, f), p in zip(layout, posts)]

    r = _Reader(sec[b"SENT"], "SENT")
    sentences = []
    for _ in range(r.u32()):
        image = r.u32()
        phrases = [[r.text() for _ in range(r.u32())] for _ in range(r.u32())]
        sentences.append(SentenceRecord(image, phrases))

    hidden = None
    if b"HIDN" in sec:
        r = _Reader(sec[b"HIDN"], "HIDN")
        if r.u32() != len(images):
            raise FormatError("HIDN: image count differs from IMGS")
        per_image = [(_read_labels(r), _read_labels(r), _read_labels(r)) for _ in images]
        if r.u32() != len(sentences):
            raise FormatError("HIDN: sentence count differs from SENT")
        per_sentence = []
        for _ in sentences:
            regions = _read_labels(r)
            per_sentence.append((regions, r.array("<f4", (len(regions), 4)).astype(np.float64)))
        hidden = HiddenLabels([a for a, _, _ in per_image], [b for _, b, _ in per_image],
                              [c for _, _, c in per_image], [a for a, _ in per_sentence],
                              [b for _, b in per_sentence])
    return GroundingDataset(taxonomy_text, images, sentences, hidden)


def save_dataset(ds: GroundingDataset, path) -> None:
    atomic_write(path, dataset_bytes(ds))


def load_dataset(path) -> GroundingDataset:
    return parse_dataset(Path(path).read_bytes())


def drop_section(data: bytes, tag: bytes) -> bytes:
    """Dataset bytes with one optional section removed (e.g. ``b"POST"``)."""
    if tag in REQUIRED:
        raise ValueError(f"{tag.decode()} is required and cannot be dropped")
    sections = split_sections(data)
    sections.pop(tag, None)
    return DATA_MAGIC + b"".join(_section(t, p) for t, p in sections.items())


def fingerprint(data: bytes, exclude=(b"POST",)) -> str:
    """Hex digest of a dataset's sections, ignoring ``exclude``.

    Eval reports carry this so that they do not depend on whether detector
    outputs are present in the file.
    """
    h = hashlib.blake2b(digest_size=8)
    for tag, payload in split_sections(data).items():
        if tag not in exclude:
            h.update(tag + payload)
    return h.hexdigest()
