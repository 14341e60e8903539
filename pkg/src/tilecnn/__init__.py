"""Tile-based CNN classification of sparse image datasets.

Images are cut into fixed-size tiles, a small convolutional network is
trained on tiles from one source image per class, and new images are mapped
tile by tile into probability maps, thresholded masks and colored overlays.
"""

__version__ = "0.1.0"
