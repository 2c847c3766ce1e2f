"""Geometric primitives shared by every other module."""
from .mesh import (TriangleMesh, box, concatenate, cylinder, icosphere, load_mesh, plane,
                   read_obj, read_off, write_off)
from .points import OrientedPoint, PointCloud
from .query import (RayHit, closest_points, distances, mesh_distance, min_distance, ray_cast, ray_cast_many,
                    sample_surface_grid, signed_distances, surface_normals_at, voxel_downsample)
from .transform import RigidTransform, axis_angle, look_at, rot_x, rot_y, rot_z

__all__ = [
    "OrientedPoint", "PointCloud", "RayHit", "RigidTransform", "TriangleMesh", "axis_angle",
    "box", "closest_points", "concatenate", "cylinder", "distances", "icosphere", "load_mesh",
    "look_at", "mesh_distance", "min_distance", "plane", "ray_cast", "ray_cast_many", "read_obj", "read_off",
    "rot_x", "rot_y", "rot_z", "sample_surface_grid", "signed_distances", "surface_normals_at",
    "voxel_downsample", "write_off",
]
