"""Direction-finding acoustic localization with sparse planar arrays.

Modules: ``geometry`` (layouts and co-arrays), ``waveforms`` (Zadoff-Chu
family and passband helpers), ``sim`` (scene synthesis), ``doa`` (MUSIC),
``ident`` (beamforming identification), ``loc`` (triangulation and pose
estimation) and ``harness`` (sweeps and CLI).
"""

__version__ = "0.1.0"
