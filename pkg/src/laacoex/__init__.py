"""Analytic model and slot-level simulator for LTE-LAA coexisting with an asymmetrically hidden Wi-Fi AP."""

__version__ = "0.1.0"
