"""Tests package for pydantic-marshmallow."""
