import logging
from functools import wraps

import click

from services.errors import GestureError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def exit_codes(f):
    """Turn toolkit errors raised inside a command into its exit code (2 data, 3 runtime)."""
    @wraps(f)
    def decorated(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except GestureError as e:
            logger.error("%s: %s", type(e).__name__, e)
            for field, messages in getattr(e, "field_errors", {}).items():
                logger.error("  %s: %s", field, "; ".join(messages))
            raise click.exceptions.Exit(e.exit_code) from e
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except Exception as e:
            logger.exception("Unexpected failure: %s", e)
            raise click.exceptions.Exit(EXIT_RUNTIME) from e
    return decorated


def run_cli(cli, args=None):
    """Invoke the click group and return a process exit code; usage errors map to 1."""
    try:
        rv = cli.main(args=args, prog_name="gesture", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_DATA
    return rv if isinstance(rv, int) else EXIT_OK
