"""Scenario runner, privacy games, attack demonstrations and fuzzers."""
