import logging
import traceback
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from cplaw.pipeline import resolve_pipeline_config, write_resolved_config
from utils.command_response import EXIT_PIPELINE_ERROR, CommandResponse
from utils.custom_logger import setup_logging
from utils.exceptions import CPLawError

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Base class for every cplaw subcommand.

    Subclasses declare their own flags in ``add_pipeline_arguments``, map
    flags onto dotted config keys in ``config_overrides`` and implement
    ``run(options, config) -> (message, data)``. This class resolves the
    pipeline config, writes it next to the outputs and turns pipeline
    errors into module-tagged ``CommandError`` with exit status 1.
    """

    module = "cli"
    writes_output = True
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Pipeline config file merged over pipeline.json.")
        parser.add_argument("--output", help="Output directory (default: paths.output of the config).")
        parser.add_argument("--log-dir", help="Also write rotating log files into this directory.")
        self.add_pipeline_arguments(parser)

    def add_pipeline_arguments(self, parser):
        pass

    def config_overrides(self, options):
        return {}

    def run(self, options, config):
        raise NotImplementedError

    def output_dir(self, options, config):
        return Path(options.get("output") or config["paths"]["output"])

    def handle(self, *args, **options):
        if options.get("log_dir"):
            setup_logging(options["log_dir"])
        try:
            overrides = {"paths.output": options.get("output")}
            overrides.update(self.config_overrides(options))
            config = resolve_pipeline_config(options.get("config"), overrides)
            if self.writes_output:
                write_resolved_config(config, self.output_dir(options, config))
            message, data = self.run(options, config)
        except CPLawError as e:
            logger.error(e.tagged())
            self.stdout.write(CommandResponse.error(message=e.tagged(), errors=e.details))
            raise CommandError(e.tagged(), returncode=EXIT_PIPELINE_ERROR) from e
        except OSError as e:
            message = f"[{self.module}] {e}"
            logger.error(message)
            self.stdout.write(CommandResponse.error(message=message))
            raise CommandError(message, returncode=EXIT_PIPELINE_ERROR) from e
        except CommandError:
            raise
        except Exception as e:
            logger.exception(f" {str(e)} | {str(traceback.format_exc())} ")
            message = f"[{self.module}] An error occured: {e}"
            self.stdout.write(CommandResponse.error(message=message))
            raise CommandError(message, returncode=EXIT_PIPELINE_ERROR) from e
        logger.info(f"[{self.module}] {message}")
        self.stdout.write(CommandResponse.success(data=data, message=message))


def parse_fix(values):
    """Parse repeatable ``--fix FIELD=VALUE`` flags into a dict of typed values."""
    fixed = {}
    for item in values or []:
        if "=" not in item:
            raise CommandError(f"--fix expects FIELD=VALUE, got {item!r}", returncode=2)
        name, raw = item.split("=", 1)
        fixed[name.strip()] = _coerce(raw.strip())
    return fixed


def _coerce(raw):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw
