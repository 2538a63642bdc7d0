"""Unordered pooling: GMM, Fisher vectors, PCA and linear regression."""
from .fisher import DescriptorSet, extract_descriptors, fv_encode
from .gmm import GmmModel, gmm_fit
from .linear import LinearModel, PcaModel, mvregress_fit, mvregress_predict, pca_fit, pca_project

__all__ = ["DescriptorSet", "extract_descriptors", "fv_encode", "GmmModel", "gmm_fit",
           "LinearModel", "PcaModel", "mvregress_fit", "mvregress_predict", "pca_fit", "pca_project"]
