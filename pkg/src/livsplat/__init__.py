"""Gaussian-splat LiDAR-inertial-visual odometry at desk scale.

Library layout:

* ``geometry``   rigid transforms, projection, Gaussian primitives
* ``voxmap``     hash-indexed octree global map
* ``initialize`` LiDAR-camera Gaussian bootstrap
* ``window``     sliding window with incremental maintenance
* ``raster``     differentiable splatting (forward + analytic backward)
* ``optimize``   Adam photometric refinement of the window
* ``estimator``  IESKF fusion (IMU, LiDAR point-to-plane, photometric)
* ``sim``        synthetic scenes and sensor streams
* ``pipeline``   batch replay driver; ``cli`` the command-line front end
"""

__version__ = "0.1.0"
