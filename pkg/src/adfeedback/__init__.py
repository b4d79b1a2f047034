"""Backward-adaptive differential quantization of time-varying MIMO channel state."""

from .channel import (ChannelTrajectory, MobilityProfile, bessel_j0, doppler_frequency, generate_trajectory,
                      theoretical_autocorrelation)
from .codec import (ChannelFeedback, CodecConfig, CodecError, DifferentialCodec, decode_matrix_stream,
                    decode_sample, encode_matrix_stream, encode_sample)
from .gain import GainConfig, GainEstimator, update_gain
from .link import NumericError, SystemConfig, ber_run, mmse_precoder, overhead, scheme_overhead, smse
from .predictor import Predictor, PredictorConfig, lls_fit
from .quantizer import Codebook, gaussian_codebook, kmeans_codebook, lloyd_max_design, quantize, singular_value_codebook
from .svd import (SingularTriple, SingularVectorCodec, UserLayout, align_columns, decode_singular_stream,
                  encode_singular_stream, haar_denormalize, haar_normalize, svd_small)

__version__ = "0.1.0"
