"""Test helpers for poolfield (repo-local)."""
