"""Scripts de utilidad."""
