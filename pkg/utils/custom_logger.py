import logging
from logging.handlers import TimedRotatingFileHandler
import os

LOG_FILE = "cplaw.log"
RETENTION_DAYS = 7

FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def setup_logging(log_dir=None, level=logging.INFO):
    formatter = logging.Formatter(FORMAT)

    # Console handler, stderr so command summaries own stdout
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Clear existing handlers, commands may call this again with --log-dir
    root_logger.handlers.clear()
    root_logger.addHandler(console_handler)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        # File handler (rotates daily, deletes old logs)
        file_handler = TimedRotatingFileHandler(
            filename=os.path.join(log_dir, LOG_FILE),
            when="midnight",
            interval=1,
            backupCount=RETENTION_DAYS,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(level)
        root_logger.addHandler(file_handler)
