"""Hybrid physics-informed neural network toolkit for laser AM thermal modeling."""

__version__ = "0.1.0"
