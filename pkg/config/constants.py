"""
Useful constant variables.
"""

from pathlib import Path

PROJECT_ROOT = Path(__file__).parent.parent
SCENARIO_CONFIG_PATH = PROJECT_ROOT / 'launch_nav' / 'settings.json'
DEFAULT_OUTPUT_PATH = PROJECT_ROOT / 'dist'
