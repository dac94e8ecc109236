#!/usr/bin/env python3
"""
Registro deformable multimodalidad con SEGI
Optimiza los campos de desplazamiento directo (U) e inverso (V) entre dos volúmenes
"""

import sys

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
