"""Soft-landing control workbench for electromechanical relays."""
