"""Command-line harness: reproducible runs with CSV outputs and manifests."""
from gaclab.harness.cli import EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE, main, parse_cli, run
from gaclab.harness.io import RunManifest, read_manifest, write_csv

__all__ = ["EXIT_DIVERGED", "EXIT_IO", "EXIT_OK", "EXIT_USAGE", "main", "parse_cli", "run",
           "RunManifest", "read_manifest", "write_csv"]
