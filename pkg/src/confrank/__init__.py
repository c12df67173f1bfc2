"""Re-ranking detection confidences so that their order follows localization quality."""

from .estimator import ConfidenceRanker
from .evaluation import evaluate, kendall_tau, mean_kendall_tau
from .geometry import BoundingBox, Detection, DetectionSet, GroundTruthImage, iou, iou_matrix
from .net.network import RankerConfig, RankerNetwork
from .net.train import TrainSchedule, train
from .oracle import assign_oracle, oracle_rescore
from .ranking import image_rank_loss, rank_loss, rank_loss_margin
from .suppression import FusionConfig, box_voting, multiscale_fuse, nms

__version__ = "0.1.0"
