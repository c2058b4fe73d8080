"""Few-view 3D: pose-conditioned novel-view generation with analytic oracle
denoisers, followed by robust voxel-grid reconstruction."""

from .backend import HAVE_NUMBA, backend_name
from .diffusion import (DenoiserRequest, GaussianOracle, NoiseSchedule,
                        SamplerOptions, SceneOracle, cfg_combine, ddim_sample,
                        ddim_step, execute_plan, sample_group, shifted_logsnr)
from .geometry import (CropMode, Intrinsics, Pose, Raymap, View, ViewKind,
                       camera_rays, compute_raymap, project, relative_pose,
                       square_crop_and_pad)
from .metrics import MetricReport, evaluate_pairs, psnr, ssim
from .pipeline import PipelineConfig, run_pipeline
from .reconstruction import (LossConfig, VoxelGrid, anneal_schedules,
                             distance_weight, perceptual_proxy, reconstruct,
                             render_view, volume_render)
from .scene import PRESET_NAMES, SceneSpec, Sphere, preset_scene, render_scene
from .scheduler import SamplingPlan, Step, StepStage, build_plan, select_anchors
from .trajectories import (PRESET_KINDS, dataset_preset, forward_circle_path,
                           look_at, orbit_path, spiral_cylinder_path,
                           spline_path, validate_path)

__version__ = "0.1.0"
