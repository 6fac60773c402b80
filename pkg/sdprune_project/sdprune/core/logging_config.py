import logging
from typing import Optional

from rich.logging import RichHandler

from sdprune.core.config import settings

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Install a rich handler on the root logger once."""
    global _configured
    level = (level or settings.log_level).upper()
    if _configured:
        logging.getLogger().setLevel(level)
        return
    logging.basicConfig(
        level=level,
        format="%(name)s: %(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=settings.debug, show_path=False)],
    )
    _configured = True
