#!/usr/bin/env python

"""Built-in configuration constants for cvqkd-rt."""
