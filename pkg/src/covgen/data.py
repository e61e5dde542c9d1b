"""Corpus and table I/O for covgen runs.

Corpus files are UTF-8 text with one SMILES per line and optional
tab-separated ``id`` and ``label`` fields. Blank lines and ``#`` comments are
ignored. Every file the engine produces is written once, atomically
(temporary file in the target directory, then rename).
"""

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CONFIG_HASH_PREFIX = "# config_hash="
THREADS_ENV = "COVGEN_THREADS"


class InputError(ValueError):
    """An input file is missing fields or cannot be read."""


@dataclass(frozen=True)
class CorpusRecord:
    smiles: str
    id: str
    label: Optional[str] = None
    line: int = 0


def iter_corpus(path: PathLike) -> Iterator[CorpusRecord]:
    """
    Stream records from a SMILES corpus file.

    Parameters
    ----------
    path : str or Path
        Corpus file. Lines are ``smiles[<TAB>id[<TAB>label]]``.

    Yields
    ------
    CorpusRecord
        One record per non-blank, non-comment line. Records without an id
        are named after their line number (``L000012``).

    Raises
    ------
    InputError
        If the file does not exist or a line has more than three fields.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Corpus file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            # empty SMILES fields are kept
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) > 3:
                raise InputError(
                    f"{path}:{lineno}: expected at most 3 tab-separated fields "
                    f"(smiles, id, label), found {len(fields)}"
                )
            smiles = fields[0].strip()
            mol_id = fields[1].strip() if len(fields) > 1 and fields[1].strip() else f"L{lineno:06d}"
            label = fields[2].strip() if len(fields) > 2 else None
            yield CorpusRecord(smiles=smiles, id=mol_id, label=label, line=lineno)


def read_corpus(path: PathLike) -> list[CorpusRecord]:
    """Read a whole corpus file; see ``iter_corpus``."""
    t0 = time.time()
    records = list(iter_corpus(path))
    logger.info(f"✓ Read {len(records)} corpus records from {path} in {time.time() - t0:.2f}s")
    if not records:
        logger.warning(f"Corpus {path} contains no records")
    return records


def format_corpus(smiles: Iterable[str], ids: Optional[Iterable[str]] = None,
                  labels: Optional[Iterable] = None) -> str:
    smiles = list(smiles)
    ids = list(ids) if ids is not None else None
    labels = list(labels) if labels is not None else None
    lines = []
    for k, s in enumerate(smiles):
        fields = [s]
        if ids is not None:
            fields.append(str(ids[k]))
            if labels is not None:
                fields.append(str(labels[k]))
        lines.append("\t".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write ``payload`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_table(df: pd.DataFrame, path: PathLike, config_hash: Optional[str] = None,
                float_format: Optional[str] = None) -> Path:
    """
    Write a CSV table with a leading ``# config_hash=...`` comment line.

    Parameters
    ----------
    df : pd.DataFrame
        Table to write; the index is not written.
    path : str or Path
        Destination CSV path.
    config_hash : str, optional
        Config hash recorded in the comment line.
    float_format : str, optional
        Passed to ``DataFrame.to_csv``.
    """
    body = df.to_csv(index=False, float_format=float_format, lineterminator="\n")
    header = f"{CONFIG_HASH_PREFIX}{config_hash}\n" if config_hash else ""
    out = atomic_write_text(path, header + body)
    logger.info(f"✓ Wrote {len(df)} rows to {out}")
    return out


def append_rows(df: pd.DataFrame, path: PathLike, float_format: Optional[str] = None) -> Path:
    """Append rows to a table started by ``write_table``; columns must match its header."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"Cannot append to missing table {path}")
    body = df.to_csv(index=False, header=False, float_format=float_format, lineterminator="\n")
    with path.open("a", encoding="utf-8") as handle:
        handle.write(body)
    logger.debug(f"Appended {len(df)} rows to {path}")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV written by ``write_table``, skipping leading comment lines.

    Only leading lines are skipped: SMILES cells may contain ``#``.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Table not found: {path}")
    skip = 0
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            skip += 1
    return pd.read_csv(path, skiprows=skip, keep_default_na=False, na_values=[""])


def read_config_hash(path: PathLike) -> Optional[str]:
    """Return the config hash recorded in a table's comment line, if any."""
    with Path(path).open(encoding="utf-8") as handle:
        first = handle.readline().strip()
    if first.startswith(CONFIG_HASH_PREFIX):
        return first[len(CONFIG_HASH_PREFIX):]
    return None


def thread_count() -> int:
    """Worker thread cap from ``COVGEN_THREADS`` (default: CPU count)."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        return os.cpu_count() or 1
    try:
        threads = int(value)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if threads < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return threads
