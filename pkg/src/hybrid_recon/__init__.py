"""Two-stage hybrid-learning MRI reconstruction on simulated non-Cartesian data.

Subpackages and modules
-----------------------
diffcore      reverse-mode autodiff, small CNN/MLP layers, ADAM, losses
trajectories  spiral and golden-angle radial sampling, density compensation
nufft         Kaiser-Bessel gridding NUFFT and multi-coil encoding
grog          self-calibrated GRAPPA operator gridding
coils         synthetic and estimated coil sensitivities
subspace      Look-Locker dictionary, temporal basis, subspace data consistency
ssdu          readout splitting and split losses
unrolled      unrolled gradient-descent networks
fitting       IR curve model, Levenberg-Marquardt and fitting networks
phantom       lung- and brain-like phantoms, IR series, noise
pipelines     experiments, persistence, metrics and the CLI
"""
__version__ = "0.1.0"
