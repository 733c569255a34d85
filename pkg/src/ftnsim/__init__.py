"""Faster-than-Nyquist signaling over doubly-selective channels.

Pilot-aided least-squares channel estimation, pilot sequence design, channel
tracking and iterative SISO MMSE equalization with an APP decoder, plus the
simulation harness that ties them together.
"""

__version__ = "0.1.0"
