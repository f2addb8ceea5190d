#!/usr/bin/env python3
"""
main.py - Main application entry point

    python main.py fit --data app/data/mcycle.csv --model model.yaml --out fit.json
"""

import os
import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Add project root to Python path
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

from app.cli import cli  # noqa: E402


if __name__ == "__main__":
    cli()
