"""Text and binary file formats.

Graph files are UTF-8 TSV with ``#`` comments:

* nodes: ``id <TAB> f1 <TAB> ... <TAB> fd`` (attributes optional)
* supply: ``src_id <TAB> dst_id``
* competitors: ``id_a <TAB> id_b``

Embedding and model files share a little-endian container: an 8-byte
magic, ``uint16`` major and minor version, a ``uint32`` length-prefixed
UTF-8 JSON header, then raw row-major ``float64`` payloads.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError
from .evalkit import MetricReport, Query, SplitResult
from .graph import CompanyGraph, canonical, degree_bucket_features
from .model import REPORT_COLUMNS, JpecConfig, JpecModel, TrainReport

EMBEDDING_MAGIC = b"JPECEMB\0"
MODEL_MAGIC = b"JPECMDL\0"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0
_PREFIX = struct.Struct("<8sHHI")


class FormatVersionWarning(UserWarning):
    """File written by a newer minor version of the format."""


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


# --- graph TSV --------------------------------------------------------------

def _records(path, header: bool):
    """Yield ``(line_number, fields)`` for every data line."""
    skipped_header = not header
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if not skipped_header:
                skipped_header = True
                continue
            yield lineno, line.split("\t")


@dataclass
class LoadedGraph:
    graph: CompanyGraph
    fallback_features: bool


def load_graph(node_file, supply_file, competitor_file=None, header: bool = False) -> LoadedGraph:
    """Read the three TSV files into a validated :class:`CompanyGraph`.

    Node ids are mapped to indices in file order.  When the node file has
    no attribute columns, one-hot log-degree buckets of the supply graph
    stand in and ``fallback_features`` is set.
    """
    ids, rows, width = [], [], None
    index = {}
    for lineno, fields in _records(node_file, header):
        node_id = fields[0].strip()
        if not node_id:
            raise FormatError(f"{node_file}:{lineno}: empty node id")
        if node_id in index:
            raise FormatError(f"{node_file}:{lineno}: duplicate node id {node_id!r}")
        if width is None:
            width = len(fields) - 1
        elif len(fields) - 1 != width:
            raise FormatError(f"{node_file}:{lineno}: expected {width} attributes, got {len(fields) - 1}")
        try:
            rows.append([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise FormatError(f"{node_file}:{lineno}: {exc}") from None
        index[node_id] = len(ids)
        ids.append(node_id)

    def edges(path, what):
        out = []
        if path is None:
            return out
        for lineno, fields in _records(path, header):
            if len(fields) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(fields)}")
            pair = []
            for f in fields:
                f = f.strip()
                if f not in index:
                    raise FormatError(f"{path}:{lineno}: unknown node id {f!r} in {what} file")
                pair.append(index[f])
            out.append(tuple(pair))
        return out

    supply = edges(supply_file, "supply")
    competitors = edges(competitor_file, "competitor")
    n = len(ids)
    for (a, b) in supply + competitors:
        if a == b:
            raise FormatError(f"self-loop on node {ids[a]!r}")
    competitors = sorted(set(canonical(a, b) for a, b in competitors))
    fallback = not width
    attr = degree_bucket_features(n, supply) if fallback else np.array(rows, dtype=np.float64).reshape(n, width)
    g = CompanyGraph(n, attr, supply, competitors, ids).check()
    return LoadedGraph(g, fallback)


def load_graph_edges(path, index: dict, header: bool = False) -> list[tuple]:
    """Edge list of ``path`` mapped through an id -> index table."""
    out = []
    for lineno, fields in _records(path, header):
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(fields)}")
        try:
            out.append((index[fields[0].strip()], index[fields[1].strip()]))
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: unknown node id {exc.args[0]!r}") from None
    return out


def _labels(g: CompanyGraph) -> Sequence[str]:
    return g.node_labels if g.node_labels is not None else [str(v) for v in range(g.n)]


def save_graph(g: CompanyGraph, node_file, supply_file, competitor_file) -> None:
    labels = _labels(g)
    with open(node_file, "w", encoding="utf-8", newline="\n") as fh:
        for v in range(g.n):
            fh.write("\t".join([labels[v], *map(_fmt, g.attr[v])]) + "\n")
    write_edges(supply_file, g.supply_edges, labels)
    write_edges(competitor_file, g.competitor_edges, labels)


def write_edges(path, edges: Iterable, labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in edges:
            fh.write(f"{labels[a]}\t{labels[b]}\n")


# --- binary container -------------------------------------------------------

def _write_container(path, magic: bytes, header: dict, arrays: Sequence[np.ndarray]) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, FORMAT_MAJOR, FORMAT_MINOR, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_container(path, magic: bytes):
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: truncated file ({len(data)} bytes)")
    found, major, minor, hlen = _PREFIX.unpack_from(data)
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if major != FORMAT_MAJOR:
        raise FormatError(f"{path}: format version {major}.{minor} is not supported "
                          f"(reader is {FORMAT_MAJOR}.{FORMAT_MINOR})")
    if minor > FORMAT_MINOR:
        warnings.warn(f"{path}: written by newer format {major}.{minor}; reading as "
                      f"{FORMAT_MAJOR}.{FORMAT_MINOR}", FormatVersionWarning, stacklevel=3)
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from None
    return header, data[start:]


def _take(payload: bytes, offset: int, shape, path) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    end = offset + 8 * count
    if end > len(payload):
        raise FormatError(f"{path}: payload too short for a {shape} matrix")
    arr = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
    return arr, end


def save_embeddings(y, ids: Optional[Sequence[str]], path, seed: Optional[int] = None) -> None:
    y = np.asarray(y, dtype=np.float64)
    rows, cols = y.shape
    ids = list(ids) if ids is not None else [str(v) for v in range(rows)]
    if len(ids) != rows:
        raise ValueError(f"{len(ids)} ids for {rows} embedding rows")
    _write_container(path, EMBEDDING_MAGIC,
                     {"rows": rows, "cols": cols, "seed": seed, "ids": ids}, [y])


def load_embeddings(path) -> tuple[np.ndarray, list]:
    """Read an embedding file; returns ``(matrix, ids)``."""
    header, payload = _read_container(path, EMBEDDING_MAGIC)
    rows, cols = int(header["rows"]), int(header["cols"])
    if len(payload) != 8 * rows * cols:
        raise FormatError(f"{path}: header says {rows}x{cols} but payload holds "
                          f"{len(payload) / 8:g} values")
    y, _ = _take(payload, 0, (rows, cols), path)
    ids = header.get("ids") or [str(v) for v in range(rows)]
    if len(ids) != rows:
        raise FormatError(f"{path}: {len(ids)} ids for {rows} rows")
    return y, list(ids)


def export_embeddings_tsv(y, ids: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node_id, row in zip(ids, np.asarray(y)):
            fh.write("\t".join([node_id, *map(_fmt, row)]) + "\n")


def save_model(model: JpecModel, path) -> None:
    cfg = model.config.to_dict()
    cfg["encoder_dims"] = list(cfg["encoder_dims"])
    shapes = [list(w.shape) for w in model.weights]
    _write_container(path, MODEL_MAGIC,
                     {"config": cfg, "seed": model.config.seed, "shapes": shapes,
                      "n_encoder": len(model.encoder_weights)}, model.weights)


def load_model(path) -> JpecModel:
    header, payload = _read_container(path, MODEL_MAGIC)
    cfg = JpecConfig.from_dict(header["config"])
    weights, offset = [], 0
    for shape in header["shapes"]:
        w, offset = _take(payload, offset, tuple(shape), path)
        weights.append(w)
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    k = int(header["n_encoder"])
    return JpecModel(weights[:k], weights[k:], cfg)


# --- config -----------------------------------------------------------------

_CONFIG_ALIASES = {"lambda": "lam", "m": "margin"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "encoder_dims":
        return tuple(int(t) for t in raw.replace(",", " ").split())
    if key in ("epochs", "seed"):
        return int(raw)
    if key in ("norm_mode", "hidden_activation", "output_activation", "optimizer"):
        return raw
    if key == "resample_negatives":
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{key} must be true or false, got {raw!r}")
        return raw.lower() in ("true", "1")
    if key == "grad_clip":
        return None if raw.lower() in ("none", "off", "0") else float(raw)
    return float(raw)


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into config keyword arguments."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _CONFIG_ALIASES.get(key, key)
        try:
            out[key] = _parse_value(key, value)
        except ValueError as exc:
            raise FormatError(f"config line {lineno}: {exc}") from None
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: JpecConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if key == "encoder_dims":
            value = ",".join(map(str, value))
        elif key == "lam":
            key = "lambda"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --- reports and splits -----------------------------------------------------

def write_train_report(report: TrainReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(REPORT_COLUMNS) + "\n")
        for row in report.rows():
            fh.write("\t".join([str(row[0]), *map(_fmt, row[1:])]) + "\n")


def write_metric_report(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric\tvalue\n")
        for key, value in metric_rows(report):
            fh.write(f"{key}\t{_fmt(value)}\n")


def metric_rows(report: MetricReport):
    for k, v in report.hits.items():
        yield f"hits@{k}", v
    for k, v in report.hits_over_k.items():
        yield f"hits_over_k@{k}", v
    yield "mrr", report.mrr
    yield "map", report.map
    for k, v in report.chance_hits.items():
        yield f"chance_hits@{k}", v
    yield "queries", report.n_queries


def summary_text(report: MetricReport, title: str = "evaluation") -> str:
    lines = [f"== {title} ({report.n_queries} queries) =="]
    for k, v in report.hits.items():
        lines.append(f"Hits@{k:<4d} {v:.4f}   (/k: {report.hits_over_k[k]:.4f}, "
                     f"chance: {report.chance_hits[k]:.4f})")
    lines.append(f"MRR      {report.mrr:.4f}")
    lines.append(f"MAP      {report.map:.4f}")
    return "\n".join(lines) + "\n"


def write_ranked_lists(ranked_lists, labels: Sequence[str], k: int, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query\trank\tcandidate\tscore\n")
        for ranked in ranked_lists:
            for rank, (c, s) in enumerate(zip(ranked.candidates[:k], ranked.scores[:k]), start=1):
                fh.write(f"{labels[ranked.query]}\t{rank}\t{labels[c]}\t{_fmt(s)}\n")


def save_split(split: SplitResult, outdir) -> list[Path]:
    """Write train/removed competitor edges, the query manifest and split metadata."""
    outdir = Path(outdir)
    labels = _labels(split.train_graph)
    paths = [outdir / "train_competitors.tsv", outdir / "removed_competitors.tsv",
             outdir / "queries.tsv", outdir / "split.json"]
    write_edges(paths[0], split.train_graph.competitor_edges, labels)
    write_edges(paths[1], split.removed_edges, labels)
    with open(paths[2], "w", encoding="utf-8", newline="\n") as fh:
        for q in sorted(split.queries, key=lambda q: q.node):
            held = ",".join(labels[c] for c in sorted(q.held_out))
            fh.write(f"{labels[q.node]}\t{held}\n")
    meta = {"split_kind": split.split_kind, "seed": split.seed,
            "params": {k: v for k, v in split.params.items() if k != "selected"},
            "n_queries": len(split.queries), "n_removed": len(split.removed_edges)}
    if "selected" in split.params:
        meta["stripped"] = [labels[v] for v in split.params["selected"]]
    paths[3].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_split(split_dir, node_file, supply_file, header: bool = False) -> SplitResult:
    split_dir = Path(split_dir)
    loaded = load_graph(node_file, supply_file, split_dir / "train_competitors.tsv", header)
    g = loaded.graph
    index = {label: v for v, label in enumerate(g.node_labels)}
    meta = json.loads((split_dir / "split.json").read_text(encoding="utf-8"))
    queries = []
    for lineno, fields in _records(split_dir / "queries.tsv", False):
        if len(fields) != 2:
            raise FormatError(f"queries.tsv:{lineno}: expected 2 columns")
        try:
            node = index[fields[0]]
            held = frozenset(index[c] for c in fields[1].split(",") if c)
        except KeyError as exc:
            raise FormatError(f"queries.tsv:{lineno}: unknown node id {exc.args[0]!r}") from None
        queries.append(Query(node, held))
    removed = []
    for lineno, fields in _records(split_dir / "removed_competitors.tsv", False):
        removed.append(canonical(index[fields[0]], index[fields[1]]))
    params = dict(meta.get("params", {}))
    if "stripped" in meta:
        params["selected"] = tuple(index[v] for v in meta["stripped"])
    return SplitResult(g, tuple(queries), tuple(sorted(removed)), meta["split_kind"],
                       meta["seed"], params)


# --- run manifest -----------------------------------------------------------

def write_manifest(path, command: str, config: dict, seeds: dict, inputs: Sequence,
                   outputs: Sequence, wall_clock: float, version: str,
                   warnings_list: Sequence[str] = (), extra: Optional[dict] = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {Path(p).name: file_digest(p) for p in outputs},
        "wall_clock_seconds": wall_clock,
        "engine_version": version,
        "warnings": list(warnings_list),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                          encoding="utf-8")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
