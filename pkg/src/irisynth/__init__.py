"""irisynth: quality-gated adversarial iris synthesis and attack analysis.

Modules:
    tensor   reverse-mode autodiff over numpy arrays, conv ops, Adam
    gan      DCGAN-style generator/discriminator with a quality gate
    quality  iris segmentation, six quality metrics, chi-squared histograms
    matcher  rubber-sheet log-Gabor iris matcher and attack evaluation
    pad      Zernike + LBPV features with an MLP attack detector
    data     procedural toy irises, manifests, PGM/PNG and checkpoint IO
    scores   ROC, FAR/FRR and EER utilities
    cli      command-line entry point
"""

__version__ = "0.1.0"
