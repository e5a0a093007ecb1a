"""Coupling from the past for perturbed interacting particle systems."""
from ips_cftp.assembler import sample_batch
from ips_cftp.assembler import sample_marginal
from ips_cftp.assembler import sample_site
from ips_cftp.exploration import parse_theta
from ips_cftp.model_file import load_model_file
from ips_cftp.version import __version__

__all__ = [
    '__version__',
    'load_model_file',
    'parse_theta',
    'sample_batch',
    'sample_marginal',
    'sample_site',
]
