"""Online continual learning with ring-buffer replay, CutMix augmentation,
multi-scale feature distillation and a task-scheduled meta-update."""

__version__ = "0.1.0"
