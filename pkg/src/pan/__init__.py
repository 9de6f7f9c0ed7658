"""PA motion cue, VAP temporal head and a desk-scale PAN built on numpy."""
from . import bench, core, flow, io, model, pa, training, vap
from .core import Param, conv2d, grad_check
from .flow import FlowField, flow_magnitude, horn_schunck
from .model import NetConfig, PANFull, PANNet, SamplerConfig, SampleMode, sample_clip
from .pa import Encoding, PAConfig, encode_e1, encode_e2, estimate_flops, pa_pair, pa_stack
from .vap import VAPParams, timescale_pool, vap_forward

__version__ = "0.1.0"
