"""Invariant eigencurrents of smooth torus endomorphisms."""
