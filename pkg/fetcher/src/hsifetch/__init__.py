"""hsifetch: dataset acquisition and conversion for spectralsnake containers."""

from .convert import ConvertError, convert
from .fetch import ChecksumError, DownloadError, fetch, fetch_file, sha256_of
from .recipes import RECIPES, DatasetRecipe, FileSpec

__all__ = [
    "RECIPES", "DatasetRecipe", "FileSpec", "fetch", "fetch_file", "sha256_of",
    "convert", "ConvertError", "ChecksumError", "DownloadError",
]
