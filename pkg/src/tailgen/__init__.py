"""Generative rebalancing for long-tailed image classification.

Train a class-conditional diffusion model on the imbalanced data itself,
synthesize samples for under-represented classes, filter out the harmful
ones, and retrain a classifier with weighted cross-entropy.
"""

from .config import (ConfigError, DatasetConfig, GroupBounds, PipelineConfig,
                     ScheduleConfig, config_from_dict, config_hash, config_to_dict,
                     parse_config, with_master_seed, write_config)
from .data import (ClassGroups, LongTailDataset, LtdsError, Sample,
                   build_longtail_counts, bytes_to_unit, class_groups,
                   generate_shapes_dataset, generation_budget, load_cifar10_binary,
                   read_ltds, subsample_longtail, unit_to_bytes, write_ltds)
from .diffusion import (CbdmConfig, NoiseSchedule, cbdm_loss, ddpm_loss,
                        forward_diffuse, generate_dataset, make_schedule, sample)
from .filtering import (FilterConfig, FilterReport, apply_filter,
                        calibrate_threshold, feature_scores, pixel_scores,
                        prob_scores, score_feature_distance, score_label_prob,
                        score_pixel_distance)
from .metrics import EvalReport, grouped_accuracy, proxy_fid, proxy_is
from .models import (CheckpointError, ConditionalUNet, FeatureExtractor,
                     ResNetClassifier, TrainConfig, TrainingDiverged,
                     classifier_logits, classifier_train_defaults,
                     denoiser_train_defaults, extract_features, load_checkpoint,
                     predict_labels, save_checkpoint, softmax_probs, strip_head,
                     train_classifier, train_denoiser, wce_loss)
from .pipeline import (RunRecord, StageCache, StageError, build_datasets,
                       evaluate_classifier, run_ablation_grid, run_filter_sweep,
                       run_omega_sweep, run_pipeline, run_role_study, run_tau_study)

__version__ = "0.1.0"
