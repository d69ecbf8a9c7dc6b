"""Tensor tomography with momentum ray transforms.

Layers, bottom up:

* :mod:`.symtensor` compressed symmetric tensor algebra (exact or float);
* :mod:`.polyfield` exact calculus on polynomial tensor fields;
* :mod:`.verify` sweeps of the exact operator identities;
* :mod:`.xray` forward transforms, adjoints and normal operators;
* :mod:`.recon` spectral inversion and Saint Venant recovery;
* :mod:`.cli` the ``tensortomo`` command line.
"""

__version__ = "0.1.0"
