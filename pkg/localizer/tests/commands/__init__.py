"""Command test package."""
