"""Hypergraph container, file formats and co-occurrence statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyInputError, FormatError, ValidationError

FORMATS = ("lines", "jsonl")


@dataclass(frozen=True)
class Hypergraph:
    """Node count plus an ordered sequence of hyperlinks.

    Each hyperlink is a sorted tuple of distinct 0-based node ids. Empty
    hyperlinks and repeated hyperlinks are allowed.
    """

    n: int
    links: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError(f"node count must be non-negative, got {self.n}")
        links = tuple(tuple(int(i) for i in e) for e in self.links)
        for j, e in enumerate(links):
            if any(b <= a for a, b in zip(e, e[1:])):
                raise ValidationError(f"hyperlink {j} is not strictly increasing: {e}")
            if e and (e[0] < 0 or e[-1] >= self.n):
                raise ValidationError(f"hyperlink {j} has ids outside [0, {self.n}): {e}")
        object.__setattr__(self, "links", links)

    @classmethod
    def from_sets(cls, links: Iterable[Iterable[int]], n: int | None = None) -> "Hypergraph":
        """Build from arbitrary iterables of ids, deduplicating and sorting each link."""
        normalized = []
        for j, e in enumerate(links):
            ids = sorted({int(i) for i in e})
            if ids and ids[0] < 0:
                raise ValidationError(f"hyperlink {j} contains a negative id {ids[0]}")
            normalized.append(tuple(ids))
        if n is None:
            n = 1 + max((e[-1] for e in normalized if e), default=-1)
        return cls(n, tuple(normalized))

    @classmethod
    def from_incidence(cls, B: np.ndarray) -> "Hypergraph":
        B = np.asarray(B)
        if B.ndim != 2:
            raise ValidationError("incidence matrix must be 2-d")
        return cls(B.shape[1], tuple(tuple(np.flatnonzero(row).tolist()) for row in B))

    @property
    def m(self) -> int:
        return len(self.links)

    def orders(self) -> np.ndarray:
        return np.fromiter((len(e) for e in self.links), dtype=np.int64, count=self.m)

    def incidence(self, dtype=np.float64) -> np.ndarray:
        """Dense m x n binary matrix with B[j, i] = 1 iff node i is in link j."""
        B = np.zeros((self.m, self.n), dtype=dtype)
        rows, cols = self._coords()
        B[rows, cols] = 1
        return B

    def sparse_incidence(self) -> sp.csr_matrix:
        rows, cols = self._coords()
        data = np.ones(rows.size, dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.m, self.n))

    def _coords(self):
        orders = self.orders()
        rows = np.repeat(np.arange(self.m), orders)
        cols = np.fromiter((i for e in self.links for i in e), dtype=np.int64, count=int(orders.sum()))
        return rows, cols


@dataclass(frozen=True)
class CooccurrenceStats:
    mean: np.ndarray
    cov: np.ndarray


def _parse_ids(tokens: Sequence[str], lineno: int) -> list[int]:
    ids = []
    for tok in tokens:
        try:
            ids.append(int(tok))
        except ValueError:
            raise FormatError(f"not an integer node id: {tok!r}", line=lineno) from None
    for i in ids:
        if i < 0:
            raise ValidationError(f"line {lineno}: negative node id {i}")
    return ids


def _read_lines(text: str):
    n = None
    links = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno == 1 and line.startswith("#"):
            body = line[1:].strip()
            if not body.startswith("n="):
                raise FormatError(f"unrecognized header {line!r}", line=lineno)
            try:
                n = int(body[2:])
            except ValueError:
                raise FormatError(f"bad node count in header {line!r}", line=lineno) from None
            continue
        links.append(_parse_ids(line.split(), lineno))
    return n, links


def _read_jsonl(text: str):
    n = None
    links = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise FormatError("expected a JSON object", line=lineno)
        if "nodes" in obj:
            nodes = obj["nodes"]
            if not isinstance(nodes, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in nodes):
                raise FormatError('"nodes" must be an integer array', line=lineno)
            links.append(_parse_ids([str(i) for i in nodes], lineno))
        elif "n" in obj:
            if n is not None or links:
                raise FormatError("header object must come first", line=lineno)
            n = obj["n"]
            if not isinstance(n, int) or n < 0:
                raise FormatError('"n" must be a non-negative integer', line=lineno)
        else:
            raise FormatError('object has neither "nodes" nor "n"', line=lineno)
    return n, links


def load_hypergraph(path, format: str = "lines") -> Hypergraph:
    """Read a hypergraph file.

    ``lines``: optional ``# n=<int>`` first line, then one hyperlink per line
    as whitespace separated ids (a blank line is an empty hyperlink).
    ``jsonl``: optional ``{"n": ...}`` header object, then ``{"nodes": [...]}``
    objects, one per line.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    text = Path(path).read_text(encoding="ascii" if format == "lines" else "utf-8")
    n, links = _read_lines(text) if format == "lines" else _read_jsonl(text)
    h = Hypergraph.from_sets(links)
    if n is not None:
        if n < h.n:
            raise ValidationError(f"header n={n} but node id {h.n - 1} present")
        h = Hypergraph(n, h.links)
    return h


def save_hypergraph(h: Hypergraph, path, format: str = "lines") -> None:
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if format == "lines":
        out = [f"# n={h.n}\n"]
        out.extend(" ".join(map(str, e)) + "\n" for e in h.links)
    else:
        out = [json.dumps({"n": h.n}) + "\n"]
        out.extend(json.dumps({"nodes": list(e)}) + "\n" for e in h.links)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.writelines(out)


def cooccurrence_stats(h: Hypergraph) -> CooccurrenceStats:
    """Node frequencies and the 1/m-normalized covariance of inclusion indicators."""
    if h.m == 0:
        raise EmptyInputError("co-occurrence statistics need at least one hyperlink")
    B = h.sparse_incidence()
    mean = np.asarray(B.sum(axis=0)).ravel() / h.m
    counts = (B.T @ B).toarray()
    cov = counts / h.m - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return CooccurrenceStats(mean=mean, cov=cov)


def degree_summary(h: Hypergraph) -> tuple[dict[int, int], dict[int, int]]:
    """Return (node -> degree, order -> number of links of that order).

    Nodes that never appear are omitted from the degree map.
    """
    degrees = Counter(i for e in h.links for i in e)
    orders = Counter(len(e) for e in h.links)
    return dict(sorted(degrees.items())), dict(sorted(orders.items()))
