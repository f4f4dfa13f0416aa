"""gridtext-sidecar: one HTTP service serving the embed/rerank/chat protocols."""

from .app import create_app, serve
from .config import ServiceConfig

__version__ = "0.1.0"

__all__ = ["ServiceConfig", "create_app", "serve"]
