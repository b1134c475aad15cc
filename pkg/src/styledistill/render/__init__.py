from .camera import Camera, CameraError, CameraPolicy, orbit_cameras, sample_camera
from .scenes import Canvas2D, RadianceGrid
from .volume import (BACKGROUND, NUM_SAMPLES, RenderOutput, UnsupportedModeError,
                     composite_weights, normals_to_rgb, render, render_normals)

__all__ = ["Camera", "CameraError", "CameraPolicy", "orbit_cameras", "sample_camera",
           "Canvas2D", "RadianceGrid", "BACKGROUND", "NUM_SAMPLES", "RenderOutput",
           "UnsupportedModeError", "composite_weights", "normals_to_rgb", "render",
           "render_normals"]
