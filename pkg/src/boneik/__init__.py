"""Amortized full-body inverse kinematics.

Joint positions go in, animation-ready local joint rotations come out.
A graph-attention regressor does the heavy lifting in one forward pass;
classic iterative solvers (gradient descent on the pose, CCD) are kept
around as reference baselines and for refinement experiments.
"""

__version__ = "0.1.0"
