import json

from rest_framework import serializers

from utils.exceptions import FormatError, SchemaError

from .schema import LR_SCHEDULES, OPTIMIZERS, SOURCES, RunConfig


class RunConfigSerializer(serializers.Serializer):
    """Validates a run configuration as it appears in a log line or request."""

    source = serializers.ChoiceField(choices=SOURCES)
    model_size_N = serializers.FloatField(min_value=0.0)
    data_size_D = serializers.FloatField(min_value=0.0)
    total_steps = serializers.IntegerField(min_value=1)
    optimizer = serializers.ChoiceField(choices=OPTIMIZERS)
    peak_lr = serializers.FloatField(min_value=0.0)
    batch_size = serializers.IntegerField(min_value=1)
    num_layers = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    num_heads = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    hidden_dim = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    lr_schedule = serializers.ChoiceField(choices=LR_SCHEDULES, required=False, allow_null=True)
    min_lr = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    min_lr_ratio = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    weight_decay = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    warmup = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    warmup_is_ratio = serializers.BooleanField(required=False, default=False)
    max_grad_norm = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    beta1 = serializers.FloatField(required=False, allow_null=True)
    beta2 = serializers.FloatField(required=False, allow_null=True)
    epsilon = serializers.FloatField(required=False, allow_null=True)
    optimizer_extras = serializers.DictField(required=False, default=dict)

    def validate(self, attrs):
        try:
            attrs["config"] = RunConfig(**attrs)
        except SchemaError as e:
            raise serializers.ValidationError({e.field or "non_field_errors": str(e)}) from e
        return attrs

    def to_config(self):
        return self.validated_data["config"]


def parse_config(payload):
    """Build a ``RunConfig`` from a mapping or raise ``SchemaError`` naming the field."""
    serializer = RunConfigSerializer(data=payload)
    if not serializer.is_valid():
        field = next(iter(serializer.errors))
        raise SchemaError(f"Invalid run configuration: {dict(serializer.errors)}", field=field)
    return serializer.to_config()


def read_config_lines(path):
    """``[(run_id, RunConfig)]`` from a JSONL file of configs or run records; ids default to ``row-<line>``."""
    rows = []
    with open(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{line_no}: {e}", module="configs") from e
            if not isinstance(payload, dict):
                raise FormatError(f"{path}:{line_no}: expected a JSON object", module="configs")
            rows.append((str(payload.get("run_id") or f"row-{line_no}"), parse_config(payload)))
    return rows
