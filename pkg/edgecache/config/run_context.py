"""
Run context for log tracing.

Every experiment command and Celery task sets a run id; the logging
filter stamps it on each record so interleaved seed runs can be told apart.
"""
import logging
from contextvars import ContextVar

# Thread-safe context variable for the run id
run_id_context: ContextVar[str] = ContextVar('run_id', default=None)

logger = logging.getLogger(__name__)


def get_run_id():
    """
    Get the current run id from context.

    Returns:
        str: Current run id or None if not set
    """
    return run_id_context.get(None)


def set_run_id(run_id):
    """
    Set the run id in the current context.

    Args:
        run_id (str): The run id to set
    """
    run_id_context.set(run_id)


def make_run_id(command, config_hash, seed=None):
    """Deterministic run id: command, config fingerprint and optional seed."""
    run_id = f"{command}-{config_hash[:10]}"
    if seed is not None:
        run_id = f"{run_id}-s{seed}"
    return run_id


class RunIdLoggingFilter(logging.Filter):
    """
    Logging filter that adds the run id to all log records.

    Usage in settings.py:
        LOGGING = {
            'filters': {
                'run_id': {
                    '()': 'config.run_context.RunIdLoggingFilter'
                }
            },
            'formatters': {
                'verbose': {
                    'format': '[%(run_id)s] %(levelname)s %(name)s: %(message)s'
                }
            }
        }
    """

    def filter(self, record):
        record.run_id = get_run_id() or 'NO-RUN'
        return True
