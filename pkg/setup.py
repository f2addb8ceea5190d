#!/usr/bin/env python3
"""
setup.py - Quick setup script for local development
"""

import json
import os
import subprocess
import sys


def setup_environment():
    """Setup local development environment"""
    print("Setting up smooth-models...")

    # Create required directories
    directories = ["output", "output/plots"]
    for directory in directories:
        os.makedirs(directory, exist_ok=True)
        print(f"[OK] Created directory: {directory}")

    # Install the package with its development extras
    print("Installing Python dependencies...")
    subprocess.run([sys.executable, "-m", "pip", "install", "-e", ".[dev]"])
    print("[OK] Dependencies installed")

    # Create default config if not exists
    if not os.path.exists("config.json"):
        print("Creating default configuration...")
        from config.settings import Config

        with open("config.json", "w") as f:
            json.dump(Config._get_default_config(), f, indent=2)
        print("[OK] Configuration created")

    from config.settings import get_config

    for issue in get_config().validate_config():
        print(f"[WARN] {issue}")

    print("\nSetup complete!")
    print("Next steps:")
    print("1. Run tests: python -m pytest tests/")
    print("2. Fit the bundled example: python main.py fit --data app/data/mcycle.csv --model docs/mcycle_gaulss.yaml --out output/mcycle.json")


if __name__ == "__main__":
    # Note: setup.py is called by pip during installation
    # To run setup manually, use: python -c "from setup import setup_environment; setup_environment()"
    from setuptools import setup

    setup()
