"""Path-traced B-mode ultrasound simulation from labeled segmentation volumes."""

__version__ = "0.1.0"

from .anatomy import AnatomyBuilder, AnatomyVolume, SegmentationVolume, TissueProperties, build_anatomy
from .pathtracer import SimParams
from .phantom import PhantomSpec, build_phantom, builtin_spec
from .postproc import PostprocParams
from .simulator import UltrasoundSimulator, phantom_simulator
from .transducer import ProbePose, TransducerConfig

__all__ = ["AnatomyBuilder", "AnatomyVolume", "PhantomSpec", "PostprocParams", "ProbePose",
           "SegmentationVolume", "SimParams", "TissueProperties", "TransducerConfig", "UltrasoundSimulator",
           "build_anatomy", "build_phantom", "builtin_spec", "phantom_simulator"]
