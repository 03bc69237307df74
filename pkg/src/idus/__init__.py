"""Iterative deep unsupervised segmentation of textured imagery."""

from .clustering import KMeansModel, cluster_superpixels, kmeans, kmeans_pp_init
from .driver import (
    IdusConfig,
    PseudoLabelState,
    run_baseline,
    run_idus,
    schedule,
    texton_init,
    train_epoch,
    update_boundaries,
    update_pseudo_labels,
)
from .evaluation import ConfusionMatrix, best_assignment, confusion, evaluate, metrics, render_report
from .imagery import (
    UNLABELED,
    Dataset,
    GroundTruthMask,
    Image,
    SyntheticSpec,
    desk_dataset,
    downsample,
    generate_synthetic_dataset,
    load_image,
    save_label_image,
)
from .loss import LossConfig, combined_loss, dice_loss, weighted_ce
from .net import NetTopology, NetworkParams, adam_step, backward, forward, init_params, lr_schedule
from .superpixel import map_labels, pool, slic

__version__ = "0.1.0"
