"""Direction-of-arrival estimation toolkit.

Classical beamformers (CBF, MVDR, MUSIC), an oracle optimal spatial filter,
a deterministic scenario simulator, and a trainable beamforming network with
its own reverse-mode autodiff engine. See the README for the CLI surface.
"""

__version__ = "0.1.0"
