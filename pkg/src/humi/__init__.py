"""Toolkit for robot-free humanoid demonstration processing and tracking interfaces.

Modules:
  geom       SE(3) poses, trajectories, interpolation, resampling
  robot      humanoid kinematic model, FK, Jacobians, limits, collision spheres
  ik         differential whole-body inverse kinematics (damped least squares)
  ingest     demo recordings, gyro cross-correlation sync, episodes, packaging
  rewards    tracking reward and penalty stack with curriculum
  augment    variable-speed augmentation and domain-randomization samplers
  chunk      hierarchical action-chunk interface and student commands
  tracksim   kinematic tracking simulator for interface experiments
  service    real-time IK preview service (websocket + batch endpoints)
  cli        batch command-line entry point
"""

__version__ = "0.1.0"
