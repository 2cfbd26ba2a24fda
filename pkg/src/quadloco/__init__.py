"""Terrain-aware quadruped locomotion stack.

Subpackages/modules:
  dynamics   floating-base rigid-body model
  qpsolver   dense convex QP solver
  wbc        whole-body controller (rigid and compliant contact modes)
  terrain    contact modeling and online terrain-compliance estimation
  estimator  attitude observer, leg odometry, navigation Kalman filter
  vital      heightmap foothold evaluation, foothold selection, pose adaptation
  harness    desk-scale simulator, gaits, scenarios, CLI
"""

__version__ = "0.1.0"
