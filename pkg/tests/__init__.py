"""Tests for harness picking."""
