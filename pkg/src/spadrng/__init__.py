"""Photon-arrival random bit generation: detector simulation, conditioning, extraction and testing."""

__version__ = "0.1.0"
