"""Hybrid quantum-classical models for molecule generation, pocket classification and ligand VAEs."""

__version__ = '0.1.0'
