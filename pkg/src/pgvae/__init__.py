"""Property-guided VAE model-based design.

Modules:

* :mod:`pgvae.nn` dense MLPs, Adam, finite-difference gradient checks
* :mod:`pgvae.generative` VAE search model and the property-guided objective
* :mod:`pgvae.oracles` GMM, lookup-table and reference-field scorers
* :mod:`pgvae.datagen` imbalanced trainsets, tagging, encodings, CSV input
* :mod:`pgvae.mbo` the optimisation loop, weighting schemes, diagnostics
* :mod:`pgvae.config`, :mod:`pgvae.experiment`, :mod:`pgvae.cli` experiment runner
"""

__version__ = "0.1.0"
