"""
AQG1 sample files and the in-memory dataset container.

Layout (all little-endian)::

    "AQG1" | version u32 | C u32 | px u32 | py u32 | pz u32 | count u64
    count x [ species_id u32 | time_index u32 | patch_row u32 | patch_col u32
              | kind u8 | extreme u8 | inputs f32[C, px, py, pz] | target f32[px, py, pz] ]

A JSON manifest next to the file (same name, ``.json`` suffix) records the
normalization parameters, thresholds, generator settings and the SHA-256 of
the file.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from advemu.exceptions import ChecksumError, DataError, FormatError, ShapeError
from advemu.grid import SpeciesKind
from advemu.patches import PatchMeta, PatchSample

logger = logging.getLogger(__name__)

MAGIC = b"AQG1"
VERSION = 1
HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("channels", "<u4"),
    ("px", "<u4"),
    ("py", "<u4"),
    ("pz", "<u4"),
    ("count", "<u8"),
])
META_FIELDS = ["species_id", "time_index", "patch_row", "patch_col", "kind", "extreme"]


def record_dtype(channels, px, py, pz):
    return np.dtype([
        ("species_id", "<u4"),
        ("time_index", "<u4"),
        ("patch_row", "<u4"),
        ("patch_col", "<u4"),
        ("kind", "u1"),
        ("extreme", "u1"),
        ("inputs", "<f4", (channels, px, py, pz)),
        ("target", "<f4", (px, py, pz)),
    ])


def manifest_path(path):
    return Path(path).with_suffix(".json")


class AQGDataset:
    def __init__(self, records, manifest=None):
        """
        Container for patch samples backed by one structured array.

        :param records: Structured array with :func:`record_dtype` fields.
        :param manifest: Optional dict of dataset-level metadata.
        """
        self.records = records
        self.manifest = dict(manifest or {})
        shape = records.dtype["inputs"].shape
        self.channels = shape[0]
        self.patch_shape = tuple(shape[1:])

    @classmethod
    def from_samples(cls, samples, channels=None, patch_shape=None, manifest=None):
        """
        Build a dataset from :class:`PatchSample` objects.

        ``channels`` and ``patch_shape`` are only needed when ``samples`` is empty.
        """
        samples = list(samples)
        if samples:
            channels, *patch = samples[0].input_channels.shape
            patch_shape = tuple(patch)
        if channels is None or patch_shape is None:
            raise DataError("an empty dataset needs explicit channels and patch_shape")
        records = np.zeros(len(samples), dtype=record_dtype(channels, *patch_shape))
        for index, sample in enumerate(samples):
            if sample.input_channels.shape != (channels,) + tuple(patch_shape):
                raise ShapeError(
                    f"sample {index} has input shape {sample.input_channels.shape}, "
                    f"expected {(channels,) + tuple(patch_shape)}")
            meta = sample.meta
            records[index] = (
                meta.species_id, meta.time_index, meta.patch_row, meta.patch_col,
                meta.kind.code, int(meta.extreme), sample.input_channels, sample.target,
            )
        return cls(records, manifest)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        record = self.records[index]
        meta = PatchMeta(
            species_id=int(record["species_id"]),
            kind=SpeciesKind.from_code(record["kind"]),
            time_index=int(record["time_index"]),
            patch_row=int(record["patch_row"]),
            patch_col=int(record["patch_col"]),
            extreme=bool(record["extreme"]),
        )
        return PatchSample(np.array(record["inputs"]), np.array(record["target"]), meta)

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    @property
    def inputs(self):
        return self.records["inputs"]

    @property
    def targets(self):
        return self.records["target"]

    def get_meta_frame(self):
        """
        Sample metadata as a data frame, one row per sample.

        :return: DataFrame with columns species_id, time_index, patch_row, patch_col, kind, extreme.
        """
        frame = pd.DataFrame({name: self.records[name] for name in META_FIELDS})
        frame = frame.astype({"species_id": int, "time_index": int, "patch_row": int, "patch_col": int})
        frame["kind"] = frame["kind"].map(lambda code: SpeciesKind.from_code(code).value)
        frame["extreme"] = frame["extreme"].astype(bool)
        return frame

    def get_stratum_counts(self):
        """
        Number of samples per stratum.

        :return: A dictionary with extreme, non_extreme and all counts.
        """
        extreme = int(np.count_nonzero(self.records["extreme"]))
        return {"extreme": extreme, "non_extreme": len(self) - extreme, "all": len(self)}

    def get_species_summary(self):
        """
        Per-species sample counts split by stratum.

        :return: DataFrame indexed by species_id with extreme, non_extreme and all columns.
        """
        frame = self.get_meta_frame()
        summary = frame.groupby("species_id")["extreme"].agg(extreme="sum", all="count")
        summary["non_extreme"] = summary["all"] - summary["extreme"]
        return summary[["extreme", "non_extreme", "all"]].astype(int)


def _header(channels, patch_shape, count):
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header[0] = (MAGIC, VERSION, channels, *patch_shape, count)
    return header.tobytes()


def file_checksum(path, chunk_size=1 << 24):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


class AQGWriter:
    def __init__(self, path, channels, patch_shape, manifest=None):
        """
        Streams samples into an AQG1 file; the header count and the manifest
        are written on close.

        :param path: Destination ``.aqg`` path.
        :param channels: Input channels per sample.
        :param patch_shape: Patch size (px, py, pz).
        :param manifest: Extra manifest entries.
        """
        self.path = Path(path)
        self.channels = int(channels)
        self.patch_shape = tuple(int(p) for p in patch_shape)
        self.dtype = record_dtype(self.channels, *self.patch_shape)
        self.manifest = dict(manifest or {})
        self.count = 0
        self.extreme = 0
        self.checksum = None
        self._handle = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "wb")
        self._handle.write(_header(self.channels, self.patch_shape, 0))
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        elif self._handle is not None:
            self._handle.close()
            self._handle = None
        return False

    def append_records(self, records):
        if records.dtype != self.dtype:
            raise ShapeError(f"record layout {records.dtype} does not match the file layout {self.dtype}")
        self._handle.write(np.ascontiguousarray(records).tobytes())
        self.count += len(records)
        self.extreme += int(np.count_nonzero(records["extreme"]))

    def append(self, sample):
        """Append one :class:`PatchSample`."""
        expected = (self.channels,) + self.patch_shape
        if sample.input_channels.shape != expected:
            raise ShapeError(f"sample has input shape {sample.input_channels.shape}, expected {expected}")
        record = np.zeros(1, dtype=self.dtype)
        meta = sample.meta
        record[0] = (meta.species_id, meta.time_index, meta.patch_row, meta.patch_col,
                     meta.kind.code, int(meta.extreme), sample.input_channels, sample.target)
        self.append_records(record)

    def close(self):
        """
        Finish the file and write its manifest.

        :return: The SHA-256 hex digest of the file.
        """
        self._handle.seek(0)
        self._handle.write(_header(self.channels, self.patch_shape, self.count))
        self._handle.close()
        self._handle = None
        self.checksum = file_checksum(self.path)
        self.manifest.update({
            "format": MAGIC.decode(),
            "version": VERSION,
            "channels": self.channels,
            "patch_shape": list(self.patch_shape),
            "count": self.count,
            "strata": {"extreme": self.extreme, "non_extreme": self.count - self.extreme, "all": self.count},
            "checksum_sha256": self.checksum,
        })
        manifest_path(self.path).write_text(json.dumps(self.manifest, indent=4, sort_keys=True))
        logger.info("Wrote %d samples to %s", self.count, self.path)
        return self.checksum


def write_aqg(dataset, path, manifest=None):
    """
    Write a dataset and its manifest.

    :param dataset: The AQGDataset to write.
    :param path: Destination ``.aqg`` path; the manifest goes next to it.
    :param manifest: Extra manifest entries merged over ``dataset.manifest``.
    :return: The SHA-256 hex digest of the written file.
    """
    content = {**dataset.manifest, **(manifest or {})}
    with AQGWriter(path, dataset.channels, dataset.patch_shape, content) as writer:
        writer.append_records(dataset.records)
    dataset.manifest = writer.manifest
    return writer.checksum


def read_aqg(path, verify=True):
    """
    Read a dataset written by :func:`write_aqg`.

    :param path: Path of the ``.aqg`` file.
    :param verify: Check the manifest checksum when a manifest exists.
    :return: The AQGDataset.
    :raises FormatError: On bad magic, unsupported version, truncation or trailing bytes.
    :raises ChecksumError: If the file does not match its manifest checksum.
    """
    path = Path(path)
    payload = path.read_bytes()
    if len(payload) < HEADER_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated header ({len(payload)} of {HEADER_DTYPE.itemsize} bytes)",
                          offset=len(payload))
    header = np.frombuffer(payload, dtype=HEADER_DTYPE, count=1)[0]
    if header["magic"] != MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}", offset=0)
    if header["version"] != VERSION:
        raise FormatError(f"{path}: unsupported version {int(header['version'])}", offset=4)
    dtype = record_dtype(int(header["channels"]), int(header["px"]), int(header["py"]), int(header["pz"]))
    count = int(header["count"])
    expected = HEADER_DTYPE.itemsize + count * dtype.itemsize
    if len(payload) < expected:
        complete = (len(payload) - HEADER_DTYPE.itemsize) // dtype.itemsize
        raise FormatError(f"{path}: truncated in sample {complete} of {count}", offset=len(payload))
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} unexpected trailing bytes", offset=expected)
    manifest = {}
    sidecar = manifest_path(path)
    if sidecar.exists():
        manifest = json.loads(sidecar.read_text())
        recorded = manifest.get("checksum_sha256")
        if verify and recorded and recorded != hashlib.sha256(payload).hexdigest():
            raise ChecksumError(f"{path}: content does not match manifest checksum {recorded}")
    if count:
        records = np.frombuffer(payload, dtype=dtype, count=count, offset=HEADER_DTYPE.itemsize)
    else:
        records = np.zeros(0, dtype=dtype)
    return AQGDataset(records, manifest)
