"""
Single entry point for the pipeline subcommands.

``run_subcommand(argv)`` dispatches ``argv[0]`` to the management command of
the same name and returns its exit status: 0 on success, 1 on a pipeline
error, 2 on an unknown subcommand or a usage error.
"""

import os
import sys

SUBCOMMANDS = ("schema", "synth", "ingest", "split", "fit", "train", "predict", "curve", "sweep", "eval")


def run_subcommand(argv, prog="cplaw"):
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "cplaw.settings")
    import django
    from django.core.management import get_commands, load_command_class

    from utils.command_response import EXIT_OK, EXIT_USAGE_ERROR, CommandResponse

    django.setup()
    if not argv or argv[0] not in SUBCOMMANDS:
        name = argv[0] if argv else ""
        sys.stdout.write(CommandResponse.usage(
            message=f"Unknown subcommand {name!r}; expected one of {', '.join(SUBCOMMANDS)}") + "\n")
        return EXIT_USAGE_ERROR

    name = argv[0]
    command = load_command_class(get_commands()[name], name)
    try:
        command.run_from_argv([prog, name, *argv[1:]])
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE_ERROR
    return EXIT_OK


def main():
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
