#!/usr/bin/env python3
"""
Startup script for the Fallback Strategies MCP server

Runs the server from a source checkout without installing the package.
The transport is taken from MCP_TRANSPORT (stdio or streamable-http).
"""

import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from fallback_strategies.server import main

if __name__ == "__main__":
    main()
