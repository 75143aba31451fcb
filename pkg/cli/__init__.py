"""
Decision Lab Command Line
Batch front door: scenarios in, CSV/JSON artifacts out
"""
__version__ = "1.0.0"
