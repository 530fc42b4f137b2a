"""Road-crossing benchmark: unicycle robot, pedestrian, KL calibration and the evaluation protocol."""
