"""
Utility modules for the application.
"""
from .config import settings, Settings
from .logging import log, setup_logging

__all__ = ["settings", "Settings", "log", "setup_logging"]
