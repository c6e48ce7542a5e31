"""Audio-visual segmentation at desk scale."""
