#!/usr/bin/env python3
"""
koss-ssm

Main entry point for the KOSS experiment command line.
"""
import sys

from koss_ssm.cli import main

if __name__ == "__main__":
    sys.exit(main())
