#!/usr/bin/env python
"""Command-line utility: pipeline subcommands plus Django's own (``test``, ``help``)."""
import os
import sys


def main():
    """Run a pipeline subcommand or an administrative task."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'cplaw.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    from cplaw.cli import SUBCOMMANDS, run_subcommand

    if len(sys.argv) > 1 and sys.argv[1] in SUBCOMMANDS:
        sys.exit(run_subcommand(sys.argv[1:], prog=os.path.basename(sys.argv[0])))
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
