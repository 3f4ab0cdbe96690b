"""Tests del solucionador de puzzles."""
