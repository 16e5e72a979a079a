"""Physically based structured-light camera simulator.

Renders cluttered bin scenes with a gray-code pattern projector, decodes
the captured frames into depth maps with realistic sensor noise (shadows,
flying pixels, quantization), and exports annotated RGBD datasets.
"""

from .errors import (CapacityExceeded, ConfigError, ConsistencyFailure,
                     DegenerateGeometry, DepthNonPositive, DoesNotFit,
                     EmptyScene, IndexOutOfRange, IoFailure, LayoutMismatch,
                     RasterMismatch, ResolutionMismatch, SlsimError,
                     UnknownInstanceId)
from .geometry import (PinholeModel, Pose, ProjectionMatrix, Ray, TriMesh,
                       build_projection_matrix, load_rig, project,
                       project_many, save_rig)
from .graycode import (GrayCodeConfig, PatternStack, decode, encode,
                       generate_pattern_stack, load_pattern_stack,
                       save_pattern_stack)
from .meshio import box_mesh, load_mesh, quad_mesh
from .reconstruct import (BitObservation, CorrespondenceMap, DepthFrame,
                          binarize, decode_correspondence, depth_metrics,
                          quantization_bound, reconstruct_depth, triangulate)
from .render import (GroundTruthFrames, RenderSettings, build_tracer,
                     projector_radiance, render_ground_truth,
                     render_pattern_frames, render_rgb)
from .scene import (AreaLight, BinBox, Material, SceneDescription,
                    SceneInstance, scene_digest)
from .scenegen import (ClutterConfig, HeightField, build_scene,
                       derive_scene_seed, load_pose_list, sample_poses,
                       settle)
from .dataset import (Annotation, AnnotationSet, RLEMask, compute_annotations,
                      export_scene_record, rle_decode, rle_encode,
                      validate_dataset, validate_scene)
from .config import PipelineConfig, load_pipeline_config

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "SlsimError", "ConfigError", "DepthNonPositive", "IndexOutOfRange",
    "RasterMismatch", "LayoutMismatch", "DegenerateGeometry",
    "ResolutionMismatch", "EmptyScene", "CapacityExceeded", "DoesNotFit",
    "UnknownInstanceId", "IoFailure", "ConsistencyFailure",
    # geometry
    "Pose", "Ray", "TriMesh", "PinholeModel", "ProjectionMatrix", "project",
    "project_many", "build_projection_matrix", "load_rig", "save_rig",
    # meshes
    "load_mesh", "box_mesh", "quad_mesh",
    # gray code
    "GrayCodeConfig", "PatternStack", "encode", "decode",
    "generate_pattern_stack", "save_pattern_stack", "load_pattern_stack",
    # scenes
    "Material", "AreaLight", "BinBox", "SceneInstance", "SceneDescription",
    "scene_digest", "ClutterConfig", "HeightField", "sample_poses", "settle",
    "build_scene", "load_pose_list", "derive_scene_seed",
    # rendering
    "RenderSettings", "GroundTruthFrames", "build_tracer",
    "render_ground_truth", "render_rgb", "projector_radiance",
    "render_pattern_frames",
    # reconstruction
    "BitObservation", "CorrespondenceMap", "DepthFrame", "binarize",
    "decode_correspondence", "triangulate", "reconstruct_depth",
    "depth_metrics", "quantization_bound",
    # dataset
    "RLEMask", "Annotation", "AnnotationSet", "rle_encode", "rle_decode",
    "compute_annotations", "export_scene_record", "validate_scene",
    "validate_dataset",
    # config
    "PipelineConfig", "load_pipeline_config",
]
