from .geometry import Box, Pose, Scene, ray_box_distances, simulate_trajectory
from .sensors import (CameraConfig, LidarConfig, cast_lidar, lidar_directions, render_pseudo_image,
                      vehicle_column)
from .dataset import (DatasetError, DatasetManifest, DatasetReader, GeneratorConfig, Sample,
                      generate_dataset, generate_sample, generate_samples, los_geometry, read_dataset,
                      write_dataset)
from .scenarios import SCENARIOS, make_scene

__all__ = [name for name in dir() if not name.startswith("_")]
