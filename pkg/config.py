"""
Configuration management for the application
Uses environment variables with sensible defaults
"""

import os

# Run registry (SQLite via SQLAlchemy)
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./runs.db")

# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Default worker count for featurization and per-model inference
DEFAULT_WORKERS = int(os.getenv("MOLPROP_WORKERS", "1"))

# Where every command writes its run manifest
MANIFEST_DIR = os.getenv("MANIFEST_DIR", "./manifests")

# Global seed used when a command is given none
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "0"))

# Application Metadata
APP_NAME = "molprop"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Graphormer and ExpC* molecular property regression with cross-validated weighted ensembling"
