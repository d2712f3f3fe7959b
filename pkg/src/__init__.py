"""
SceneMix - multi-channel log-mel CNN toolkit for acoustic scene classification
"""

__version__ = "1.0.0"
__author__ = "SceneMix contributors"
