"""Download-and-verify step: cached files are reused without touching the
network; checksums are pinned from the recipe or recorded on first fetch."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import urllib.error
import urllib.request


class DownloadError(RuntimeError):
    pass


class ChecksumError(RuntimeError):
    pass


def sha256_of(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            block = f.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def _records_path(dataset_dir):
    return os.path.join(dataset_dir, "checksums.json")


def _load_records(dataset_dir):
    path = _records_path(dataset_dir)
    if os.path.isfile(path):
        with open(path) as f:
            return json.load(f)
    return {}


def _save_records(dataset_dir, records):
    with open(_records_path(dataset_dir), "w") as f:
        json.dump(records, f, indent=1, sort_keys=True)


def _expected_checksum(spec, records):
    return spec.sha256 or records.get(spec.filename)


def _download(urls, target):
    err = None
    for url in urls:
        part = target + ".part"
        try:
            with urllib.request.urlopen(url, timeout=60) as resp, open(part, "wb") as out:
                shutil.copyfileobj(resp, out)
            os.replace(part, target)
            return url
        except (urllib.error.URLError, OSError, ValueError) as e:
            err = e
            if os.path.exists(part):
                os.remove(part)
    raise DownloadError(f"all sources failed for {os.path.basename(target)}: {err}")


def fetch_file(spec, dataset_dir):
    """Ensure spec.filename exists in dataset_dir with a matching checksum.

    Returns the local path. A cached file with a good checksum never touches
    the network; a checksum mismatch aborts (the file is left in place for
    inspection)."""
    os.makedirs(dataset_dir, exist_ok=True)
    records = _load_records(dataset_dir)
    target = os.path.join(dataset_dir, spec.filename)
    expected = _expected_checksum(spec, records)
    if os.path.isfile(target):
        got = sha256_of(target)
        if expected is None:
            records[spec.filename] = got
            _save_records(dataset_dir, records)
            return target
        if got != expected:
            raise ChecksumError(
                f"{spec.filename}: sha256 {got} does not match expected {expected}"
            )
        return target
    url = _download(spec.urls, target)
    got = sha256_of(target)
    if expected is None:
        records[spec.filename] = got
        _save_records(dataset_dir, records)
    elif got != expected:
        raise ChecksumError(
            f"{spec.filename} (from {url}): sha256 {got} does not match expected {expected}"
        )
    return target


def fetch(recipe, cache_dir):
    """Fetch cube and label files for a recipe; returns their local paths."""
    dataset_dir = os.path.join(cache_dir, recipe.name)
    cube = fetch_file(recipe.cube, dataset_dir)
    labels = fetch_file(recipe.labels, dataset_dir)
    return cube, labels
