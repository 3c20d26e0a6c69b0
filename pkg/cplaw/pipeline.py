"""
Declarative pipeline configuration.

``settings.CPLAW`` (loaded from ``pipeline.json``) is the base; a
``--config`` file is merged on top and command-line flags on top of that.
The merged result is validated here and written next to every output.
"""

import copy
import json
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from utils.exceptions import ArgumentError

RESOLVED_CONFIG_FILE = "resolved_config.json"


class IngestSectionSerializer(serializers.Serializer):
    format = serializers.ChoiceField(choices=["jsonl"])
    smoothing_coeff = serializers.FloatField(min_value=0.0)
    divergence_threshold = serializers.FloatField()
    gap_threshold = serializers.FloatField(min_value=0.0)
    slope_threshold = serializers.FloatField()
    window_fraction = serializers.FloatField(min_value=0.0, max_value=1.0)
    max_malformed_fraction = serializers.FloatField(min_value=0.0, max_value=1.0)

    def validate_smoothing_coeff(self, value):
        if value >= 1.0:
            raise serializers.ValidationError("Smoothing coefficient must lie in [0, 1).")
        return value


class SplitSectionSerializer(serializers.Serializer):
    seed = serializers.IntegerField()
    ratio = serializers.FloatField()
    ood_threshold = serializers.FloatField(min_value=0.0)

    def validate_ratio(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("Split ratio must lie in (0, 1).")
        return value


class FitSectionSerializer(serializers.Serializer):
    huber_delta = serializers.FloatField(min_value=0.0)
    exponent_grid = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1)
    top_starts = serializers.IntegerField(min_value=1)
    max_iter = serializers.IntegerField(min_value=1)
    per_optimizer = serializers.BooleanField()


class StageSerializer(serializers.Serializer):
    epochs = serializers.IntegerField(min_value=0)
    peak_lr = serializers.FloatField(min_value=0.0)
    warmup_ratio = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    warmup_steps = serializers.IntegerField(min_value=0, required=False)


class PlanSerializer(serializers.Serializer):
    stage1 = StageSerializer()
    stage2 = StageSerializer()


class TrainSectionSerializer(serializers.Serializer):
    seed = serializers.IntegerField()
    residual_target = serializers.BooleanField()
    curve_points = serializers.IntegerField(min_value=1)
    architecture = serializers.DictField(child=serializers.IntegerField(min_value=1))
    optimizer = serializers.DictField(child=serializers.FloatField())
    final = PlanSerializer()
    curve = PlanSerializer()


class GbtSectionSerializer(serializers.Serializer):
    rounds = serializers.IntegerField(min_value=0)
    max_depth = serializers.IntegerField(min_value=1)
    learning_rate = serializers.FloatField(min_value=0.0, max_value=1.0)
    min_leaf = serializers.IntegerField(min_value=1)


class SweepSectionSerializer(serializers.Serializer):
    lr_axis = serializers.DictField()
    batch_axis = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    near_frac = serializers.FloatField(min_value=0.0)


class PipelineConfigSerializer(serializers.Serializer):
    schema_version = serializers.CharField()
    paths = serializers.DictField(child=serializers.CharField(allow_blank=True))
    ingest = IngestSectionSerializer()
    split = SplitSectionSerializer()
    fit = FitSectionSerializer()
    train = TrainSectionSerializer()
    gbt = GbtSectionSerializer()
    sweep = SweepSectionSerializer()
    contour = serializers.DictField()
    synth = serializers.DictField()
    metric_targets = serializers.DictField(child=serializers.FloatField())


def deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def set_dotted(config, dotted, value):
    *parents, leaf = dotted.split(".")
    node = config
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def resolve_pipeline_config(config_path=None, overrides=None):
    """Merge defaults, an optional config file and flag overrides, then validate."""
    config = copy.deepcopy(settings.CPLAW)
    if config_path:
        with open(config_path) as config_file:
            config = deep_merge(config, json.load(config_file))
    for dotted, value in (overrides or {}).items():
        if value is not None:
            set_dotted(config, dotted, value)

    serializer = PipelineConfigSerializer(data=config)
    if not serializer.is_valid():
        raise ArgumentError(f"Invalid pipeline configuration: {json.dumps(serializer.errors)}", module="cli")
    return config


def write_resolved_config(config, output_dir):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / RESOLVED_CONFIG_FILE
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path
