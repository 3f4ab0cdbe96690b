"""Utilidades de entrada/salida de imágenes."""

from app.utils.pnm import decode_pnm, encode_pnm, read_pnm, suffix_for, write_pnm

__all__ = ["decode_pnm", "encode_pnm", "read_pnm", "suffix_for", "write_pnm"]
