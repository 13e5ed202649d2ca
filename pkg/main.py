#!/usr/bin/env python3
# microtrap CLI: solve trap fields, run pulse-sequence scans, fit records, synthesize waveforms
import sys

from microtrap.cli import main

if __name__ == "__main__":
    sys.exit(main())
