"""Test suite for Python services"""
