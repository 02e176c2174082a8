# Shim for tools that still call setup.py directly
# Package metadata, dependencies and the alphadoc entry point live in pyproject.toml

from setuptools import setup

if __name__ == "__main__":
    setup()
