"""Swing-equation simulation and selected-physics neural surrogates."""
