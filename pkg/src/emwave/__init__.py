"""Electromechanical wave simulation and wavefront analysis."""
