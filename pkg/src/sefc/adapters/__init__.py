"""Shipped adapter config files (one YAML per data source)."""
