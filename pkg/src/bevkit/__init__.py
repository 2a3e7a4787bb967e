"""Temporal-stereo depth estimation toolkit with BEV pooling and NMS.

Core subsystems: camera geometry (`geometry`), synthetic ground-truth
scenes (`scene`), iterative stereo depth hypotheses (`stereo`), mono/stereo
fusion (`fusion`), BEV voxel pooling (`pool`), rotated-box suppression
(`nms`), and evaluation metrics (`metrics`). `experiments` wires them into
reproducible runs served over HTTP (`service`) and a thin CLI (`cli`).
"""

__version__ = "0.1.0"
