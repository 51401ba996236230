import logging

import click

from services.config import load_settings
from services.data import configure_frame_cache

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level):
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT, force=True)


# =====================
# Command group
# =====================
@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--log-level", default=None, help="Overrides GESTURE_LOG_LEVEL (DEBUG, INFO, WARNING, ...).")
@click.pass_context
def cli(ctx, log_level):
    """Dense 3D CNN surgical gesture recognition: ingest, train, evaluate."""
    settings = load_settings()
    configure_logging(log_level or settings.log_level)
    configure_frame_cache(settings.frame_cache_size)
    ctx.obj = settings


# =====================
# Commands (imported after the group exists)
# =====================
from commands import register_commands  # noqa: E402

register_commands(cli)
