"""Behavior panels and multiple-group continuous-time latent models for small-group sessions."""

__version__ = "0.1.0"
SCHEMA_VERSION = "ctpanel/1"
