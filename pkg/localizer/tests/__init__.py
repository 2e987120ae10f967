"""
Tests for the sparse input localizer
"""
