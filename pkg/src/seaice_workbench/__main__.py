"""Запуск через python -m seaice_workbench"""

import sys

from .cli import main

sys.exit(main())
