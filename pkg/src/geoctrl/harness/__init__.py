"""Scenario files, experiment drivers, CSV output and the ``geo-ctrl`` CLI."""
