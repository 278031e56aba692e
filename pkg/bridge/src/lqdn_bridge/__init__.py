"""Reference denoiser server speaking the LQDN v1 wire protocol.

Ships an identity mode (bit-exact echo) and an analytic Gaussian-mixture
posterior-mean mode, and is the mount point where a real generative-model
denoiser would be attached.  The mixture math here is derived through
per-component conjugate posteriors, independently of any client-side
implementation, so cross-implementation parity checks are meaningful.
"""

__version__ = "0.1.0"

from .gmm import MixtureDenoiser
from .server import ServerConfig, serve
