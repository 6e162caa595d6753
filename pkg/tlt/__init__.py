"""Treatment learning causal transformer"""

__version__ = "0.1.0"
