"""Scribble-supervised camouflaged object detection toolkit.

Stage 1 turns sparse scribbles into point prompts for a promptable
segmenter and filters the resulting candidate masks through a
multi-agent debate. Stage 2 trains a frequency-aware segmentation
network on the accepted pseudo masks mixed with the scribble evidence.
"""

__version__ = "0.1.0"
