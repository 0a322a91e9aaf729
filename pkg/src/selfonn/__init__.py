"""Compact two-hidden-layer image denoisers built from convolutional (Q = 1) and generative (Q > 1) neurons."""
from selfonn.classes import Activation, Image, LayerSpec, NetworkSpec, NoiseConfig, PatchSet
from selfonn.evaluate import EvalGrid, aggregate_report, delta_q_table, denoise_image, evaluate_dataset, psnr
from selfonn.layers import GenerativeConvParams, Network, build_network, deserialize_model, load_model, \
    save_model, serialize_model
from selfonn.train import AdamConfig, TrainConfig, fit

__all__ = [
    'Activation', 'Image', 'LayerSpec', 'NetworkSpec', 'NoiseConfig', 'PatchSet',
    'EvalGrid', 'aggregate_report', 'delta_q_table', 'denoise_image', 'evaluate_dataset', 'psnr',
    'GenerativeConvParams', 'Network', 'build_network', 'deserialize_model', 'load_model', 'save_model',
    'serialize_model',
    'AdamConfig', 'TrainConfig', 'fit',
]
