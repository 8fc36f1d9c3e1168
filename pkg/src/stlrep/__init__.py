"""Self-taught learning with pools of diverse convolutional-autoencoder
representations, fused and evaluated leave-one-subject-out."""
from ._kernels import BACKEND
from .cae import ArchitectureSpec, CaeModel, EncoderModel, build_architecture, encode, encode_batch, train
from .classifiers import bagging_train, forest_train, logreg_train, svm_train, tree_train
from .config import ConfigError, ExperimentConfig, parse_config
from .diversity import RepresentationSpec, build_pool
from .ensembles import PosteriorMatrix, fuse_product, fuse_sum, knorau_predict, stack_predict, stack_train
from .evaluation import ExperimentReport, accuracy, auc_ovr, loso_split
from .features import FeatureMatrix, extract_features, pca_fit, pca_transform
from .numerics import RandomStream, sym_eig
from .pipeline import run_experiment

__version__ = "0.1.0"
