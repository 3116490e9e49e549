"""Tests for the reservesets package."""
