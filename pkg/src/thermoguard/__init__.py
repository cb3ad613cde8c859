"""Thermal-image people detection, social-distancing checks and fever screening."""

__version__ = "0.1.0"

from .distancing import (BoundingBox, CameraModel, DistancingConfig, FrameAssessment,
                         assess_frame, center, meters_per_pixel, pixel_distance)
from .engine import (BatchNormParams, ConvLayer, MaxPoolLayer, NetworkSpec, ReLU, as_tensor,
                     batch_norm, conv2d, fold_batchnorm, forward, max_pool2, reference_backbone,
                     relu)
from .evaluation import (EvalSummary, MatchResult, SplitSpec, average_precision, evaluate,
                         match_detections, miss_rate, split_dataset)
from .thermal import (FeverConfig, PersonTemperature, TempCalibration, ThermalFrame, load_frame,
                      person_temperature, to_celsius, write_frame)
from .yolo import AnchorSet, DecodeConfig, Detection, YoloHead, decode, detect, iou, nms
