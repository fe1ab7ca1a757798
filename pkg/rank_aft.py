#!/usr/bin/env python3
"""
Rank-based AFT regression for partly interval-censored and doubly-censored data
Gehan and log-rank fits, resampling covariance, two-sample test and simulations
"""

import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

# Check dependencies early
try:
    import numpy
    import scipy.optimize
except ImportError:
    print("❌ numpy/scipy not installed!")
    print("📦 Install with: pip install numpy scipy")
    sys.exit(1)

try:
    import pandas
except ImportError:
    print("❌ pandas not installed!")
    print("📦 Install with: pip install pandas")
    sys.exit(1)

try:
    import yaml
except ImportError:
    print("❌ PyYAML not installed!")
    print("📦 Install with: pip install PyYAML")
    sys.exit(1)

from rank_aft.main import main

if __name__ == "__main__":
    sys.exit(main())
