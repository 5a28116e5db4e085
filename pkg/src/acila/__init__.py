"""Service-based access control: data plane, controller and entry-count model."""

__version__ = "0.1.0"
