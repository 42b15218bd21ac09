"""HTTP review service: serves cases and guidance, accepts verdicts."""

from .app import create_app

__all__ = ["create_app"]
