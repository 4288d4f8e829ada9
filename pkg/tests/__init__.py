"""Test package for symflow."""
