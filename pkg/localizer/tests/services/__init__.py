"""Services test package."""
