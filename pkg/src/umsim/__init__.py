"""Desk-scale simulation of ultra-massive MIMO arrays: channels, estimation, detection, beamforming."""
__version__ = "0.1.0"

from .beamforming import BeamformerSet, Beamformer, mrt, sum_rate, wmmse, zf_beamform
from .channel import (ChannelRealization, FarSource, NearSource, PathComponent, Scenario, array_response,
                      assemble_channel, multiuser_channel, sample_paths)
from .config import SimConfig, load_config, load_preset, parse_config
from .denoisers import IdentityDenoiser, LinearShrinkage, TweedieDenoiser, mc_divergence
from .detection import (Constellation, DetectionResult, SymbolDetector, detect_amp, detect_ep, detect_ml,
                        detect_oamp, linear_detect, make_constellation, ser)
from .estimation import (EstimatorReport, LeastSquaresEstimator, LMMSEEstimator, OAMPEstimator, lmmse_estimate,
                         ls_estimate, nmse, oamp_estimate)
from .geometry import ArrayGeometry, aperture, build_aosa, rayleigh_distance, rayleigh_distance_closed_form
from .io import TrialRecord, read_csv, write_csv
from .measurement import MeasurementOperator, build_pilot_operator, dft_dictionary, observe
from .priors import BernoulliGaussianPrior, GaussianMixturePrior, GaussianPrior, make_prior, tweedie_denoise
from .risk import gsure, sure
from .runner import run_trials
