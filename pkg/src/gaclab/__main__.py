"""``python -m gaclab <subcommand>`` runs the harness CLI."""
import sys

from gaclab.harness.cli import main

sys.exit(main())
