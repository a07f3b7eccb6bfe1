from ._constants import *
from ._exceptions import MlconvError, TensorShapeError, DecompositionError, \
    ConfigError, TopologyError, DatasetFormatError, CheckpointError, \
    TrainingDiverged
from ._tensor import KruskalFactors, tensor_element, unfold, refold, \
    mode_product, khatri_rao, kruskal_reconstruct, multilinear_response
from ._cp_als import CpAlsReport, cp_als
from ._ops import conv2d_forward, conv2d_backward, depthwise_forward, \
    depthwise_backward, mlconv_kernel, mlconv_forward_scheme1, \
    mlconv_backward_scheme1, mlconv_forward_scheme2, \
    mlconv_backward_scheme2, lrconv_kernel, lrconv_forward, \
    lrconv_backward, batchnorm_forward, batchnorm_backward, lrelu, \
    lrelu_backward, maxpool2x2, maxpool2x2_backward, global_avg_pool, \
    global_avg_pool_backward, dropout, softmax, softmax_xent, \
    softmax_xent_backward
from ._layers import Layer, Conv2D, MLConv2D, LRConv2D, BatchNorm, \
    LeakyReLU, MaxPool2x2, Dropout, GlobalAvgPool
from ._config import LayerSpec, ModelConfig, parse_model_config, \
    load_model_config, format_model_config, validate_model_config, \
    config_hash, baseline_config, variant_config
from ._network import Network
from ._optim import OptimizerState, SGDMomentum, Adam, sgd_momentum_step, \
    adam_step, optimizer_step, apply_weight_decay, apply_max_norm, \
    filter_norms, make_schedule, named_schedule, schedule_lr
from ._training import Augmentation, TrainConfig, EpochMetrics, Evaluation, \
    build_network, train, evaluate, metrics_csv, median_final_error
from ._datasets import Dataset, load_cifar10, load_cifar100, load_mnist, \
    load_mnist_idx, load_dataset, augment, augment_batch, translate, \
    flip_horizontal
from ._checkpoint import Checkpoint, save_checkpoint, load_checkpoint, \
    save_network, load_network
from ._convert import LayerFit, convert_cnn_to_mlconv, fit_csv
from ._analysis import CostReport, LayerCost, GainRatios, BenchResult, \
    count_params, count_macs, cost_report, gain_ratios, bench_forward, \
    variant_table
from ._manifest import RunManifest, write_manifest, read_manifest
