"""Reference stdio server for the external denoiser protocol (v1)."""

from .denoise import DiagonalDenoiser, alpha_bar_table, echo, zero
from .server import ProtocolSession, serve

__version__ = "0.1.0"
