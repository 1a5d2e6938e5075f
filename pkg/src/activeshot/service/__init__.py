"""HTTP service wrapping training, evaluation, and dataset preparation."""

from .app import create_app

__all__ = ["create_app"]
