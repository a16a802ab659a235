"""Kernel-Distortion generative classifier for handwritten characters.

Class-conditional densities are mixtures of Gaussian kernels whose
covariances are shaped by each kernel's distortion subspace (translations,
expansions, rotation).  Kernels are chosen by iterative remove/add
selection.  Posteriors can be combined with an external discriminative
classifier by cascading or stacking.
"""

from .classify import Classifier, Metrics, evaluate, posterior, posteriors, predict, predict_batch
from .dataset import LabeledImageSet, load_delimited, load_idx, pad_margin, stratified_sample
from .density import ClassModel, Kernel, VarianceParams, log_kernel_density, log_mixture
from .distortion import DistortionBasis, build_basis, build_distortion_matrix, build_operators, distortion_basis
from .hybrid import PosteriorTable, cascade, load_posterior_table, stack, tune
from .persist import load_model, save_model
from .pipeline import train_classifier
from .selection import SelectionConfig, SelectionTrace, select_kernels

__version__ = "0.1.0"
