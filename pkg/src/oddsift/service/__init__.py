from .app import create_app, render_adjusted

__all__ = ["create_app", "render_adjusted"]
