"""End-to-end and trend tests for hieraseg."""
