import logging
import math

from rest_framework import serializers

from configs.serializers import RunConfigSerializer

from .records import DEFAULT_SMOOTHING, RunRecord, smooth_curve

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("run_id", "finished", "final_loss", "curve", "smoothed")

# Logged final losses may be rounded; larger disagreements are reported.
FINAL_LOSS_TOLERANCE = 1e-6


class CurvePointField(serializers.ListField):
    child = serializers.FloatField()

    def __init__(self, **kwargs):
        super().__init__(min_length=2, max_length=2, **kwargs)


class RunRecordSerializer(RunConfigSerializer):
    """One run-log line: the run configuration plus its outcome."""

    run_id = serializers.CharField(max_length=255)
    finished = serializers.BooleanField(default=True)
    final_loss = serializers.FloatField(required=False, allow_null=True)
    curve = serializers.ListField(child=CurvePointField(), required=False, default=list)
    smoothed = serializers.BooleanField(default=False)

    def validate_curve(self, value):
        steps = [point[0] for point in value]
        losses = [point[1] for point in value]
        if any(step != int(step) for step in steps):
            raise serializers.ValidationError("Curve steps must be integers.")
        if any(later <= earlier for earlier, later in zip(steps, steps[1:])):
            raise serializers.ValidationError("Curve steps must be strictly increasing.")
        if any(not math.isfinite(loss) or loss <= 0 for loss in losses):
            raise serializers.ValidationError("Curve losses must be finite and positive.")
        return value

    def validate_final_loss(self, value):
        if value is not None and (not math.isfinite(value) or value <= 0):
            raise serializers.ValidationError("Final loss must be finite and positive.")
        return value

    def validate(self, attrs):
        outcome = {name: attrs.pop(name) for name in RECORD_FIELDS if name in attrs}
        attrs = super().validate(attrs)

        curve = outcome.get("curve") or []
        final_loss = outcome.get("final_loss")
        if curve and not outcome.get("smoothed", False):
            coeff = self.context.get("smoothing_coeff", DEFAULT_SMOOTHING)
            curve = smooth_curve(curve, coeff).tolist()
        if curve:
            tail = curve[-1][1]
            if final_loss is not None and abs(final_loss - tail) > FINAL_LOSS_TOLERANCE:
                logger.warning(
                    f"Run {outcome['run_id']}: logged final loss {final_loss} differs from smoothed "
                    f"curve tail {tail}; using the curve tail"
                )
            final_loss = tail
        elif final_loss is None:
            raise serializers.ValidationError({"final_loss": "Required when no curve is logged."})

        attrs["record"] = RunRecord(
            config=attrs["config"],
            final_loss=float(final_loss),
            run_id=outcome["run_id"],
            finished=outcome.get("finished", True),
            curve=tuple((int(step), float(loss)) for step, loss in curve),
        )
        return attrs

    def to_record(self):
        return self.validated_data["record"]
