"""segpaint: joint segmentation and painting of occluded objects.

Given an image and a mask for the visible part of an object, the pipeline
predicts the full object mask and paints the hidden region, trained
adversarially on procedurally generated layered scenes with exact
occlusion ground truth. Depth layering is inferred from the resulting
masks.
"""

__version__ = "0.1.0"
