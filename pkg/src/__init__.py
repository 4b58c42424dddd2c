"""Runtime package for the pixseg segmentation engine."""
