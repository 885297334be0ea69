"""Unit tests for hieraseg."""
