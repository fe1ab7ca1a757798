"""Test package for the rank AFT toolkit"""
