"""
Download and verify the MovieLens-100k ratings.

The archive is checked against the MD5 digest GroupLens publishes next to it
(``<url>.md5``), or against a digest given explicitly. A verified digest is
stored beside the archive so later calls work offline and skip the download.
Archives that fail verification are renamed to ``*.quarantine`` and never
extracted.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import shutil
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "ML100K_URL",
    "DATA_DIR_ENV",
    "ChecksumError",
    "FetchError",
    "FetchResult",
    "data_dir",
    "ratings_path",
    "fetch",
    "md5sum",
]

logger = logging.getLogger(__name__)

ML100K_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
DATA_DIR_ENV = "SAFEBOCP_DATA_DIR"
DATASETS = {"ml-100k": (ML100K_URL, "ml-100k/u.data")}


class ChecksumError(RuntimeError):
    """Downloaded archive does not match its expected digest."""


class FetchError(OSError):
    """Network or filesystem failure while obtaining a dataset."""


@dataclass(frozen=True)
class FetchResult:
    path: Path
    downloaded: bool


def data_dir() -> Path:
    """Dataset cache directory: ``$SAFEBOCP_DATA_DIR`` or ``~/.cache/safebocp``."""
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else Path.home() / ".cache" / "safebocp"


def ratings_path(dest=None) -> Path:
    """Location of the extracted ``u.data``; raises if it has not been fetched."""
    path = Path(dest or data_dir()) / DATASETS["ml-100k"][1]
    if not path.is_file():
        raise FileNotFoundError(
            f"MovieLens-100k ratings not found at {path}. Run `safebocp fetch-data ml-100k` "
            f"or place u.data there (set {DATA_DIR_ENV} to use another directory)."
        )
    return path


def md5sum(path) -> str:
    h = hashlib.md5(usedforsecurity=False)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url, target: Path, expected_path: Path):
    part = target.with_name(target.name + ".part")
    try:
        with urllib.request.urlopen(url, timeout=60) as resp, open(part, "wb") as fh:
            shutil.copyfileobj(resp, fh)
    except (urllib.error.URLError, OSError) as exc:
        part.unlink(missing_ok=True)
        raise FetchError(
            f"could not download {url} ({exc}). Without network access, place the "
            f"archive at {target} or the ratings file at {expected_path}."
        ) from exc
    part.replace(target)


def _published_md5(url, expected_path: Path) -> str:
    try:
        with urllib.request.urlopen(url + ".md5", timeout=60) as resp:
            text = resp.read().decode("ascii", "replace")
    except (urllib.error.URLError, OSError) as exc:
        raise FetchError(
            f"could not fetch the published checksum {url}.md5 ({exc}). Pass the digest "
            f"explicitly or place the ratings file at {expected_path}."
        ) from exc
    match = re.search(r"\b[0-9a-fA-F]{32}\b", text)
    if not match:
        raise FetchError(f"no MD5 digest found in {url}.md5")
    return match.group(0).lower()


def fetch(dataset="ml-100k", dest=None, url=None, md5=None) -> FetchResult:
    """Obtain, verify and extract a dataset; a verified existing copy is reused.

    Parameters
    ----------
    dataset : str
        Only ``"ml-100k"`` is known.
    dest : path, optional
        Cache directory (default :func:`data_dir`).
    url : str, optional
        Archive URL override (``file://`` works for local mirrors).
    md5 : str, optional
        Expected archive digest; defaults to the stored or published one.
    """
    if dataset not in DATASETS:
        raise ValueError(f"unknown dataset {dataset!r}; known: {sorted(DATASETS)}")
    default_url, member = DATASETS[dataset]
    url = url or default_url
    dest = Path(dest or data_dir())
    dest.mkdir(parents=True, exist_ok=True)
    archive = dest / f"{dataset}.zip"
    digest_file = dest / f"{dataset}.zip.md5"
    target = dest / member

    expected = md5.lower() if md5 else None
    if expected is None and digest_file.is_file():
        expected = digest_file.read_text().strip()

    if archive.is_file() and expected and md5sum(archive) == expected:
        downloaded = False
        logger.info("%s already present and verified", archive)
    else:
        if expected is None:
            expected = _published_md5(url, target)
        _download(url, archive, target)
        downloaded = True
        actual = md5sum(archive)
        if actual != expected:
            quarantine = archive.with_name(archive.name + ".quarantine")
            archive.replace(quarantine)
            raise ChecksumError(
                f"checksum mismatch for {url}: expected md5 {expected}, got {actual}; "
                f"archive moved to {quarantine}"
            )
    digest_file.write_text(expected + "\n")

    if downloaded or not target.is_file():
        with zipfile.ZipFile(archive) as zf:
            try:
                data = zf.read(member)
            except KeyError:
                raise FetchError(f"{archive} has no member {member}") from None
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    return FetchResult(target, downloaded)
