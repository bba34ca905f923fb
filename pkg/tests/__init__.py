# tests/__init__.py
"""
Initialization file for the HARGNN test suite package.
"""
