import math

from rest_framework import serializers


def _check_finite(values, label):
    for v in values:
        if not math.isfinite(v):
            raise serializers.ValidationError(f"{label} must be finite numbers")


class AtomSerializer(serializers.Serializer):
    x = serializers.ListField(child=serializers.FloatField(), allow_empty=False)
    b = serializers.FloatField()

    def validate_x(self, value):
        _check_finite(value, "Coordinates")
        return value

    def validate_b(self, value):
        """Atom weights are strictly positive masses"""
        if not math.isfinite(value) or value <= 0:
            raise serializers.ValidationError("Atom weight must be a positive finite number")
        return value


class DiffuseSerializer(serializers.Serializer):
    type = serializers.ChoiceField(choices=["samples", "uniform_box"])
    total_mass = serializers.FloatField(min_value=0.0)
    max_sample_weight = serializers.FloatField(required=False, allow_null=True, min_value=0.0)

    # type == "samples"
    points = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField()), required=False
    )
    weights = serializers.ListField(child=serializers.FloatField(), required=False)

    # type == "uniform_box"
    lo = serializers.ListField(child=serializers.FloatField(), required=False)
    hi = serializers.ListField(child=serializers.FloatField(), required=False)
    samples = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(required=False, default=0)

    def validate_weights(self, value):
        _check_finite(value, "Sample weights")
        if any(w <= 0 for w in value):
            raise serializers.ValidationError("Sample weights must be positive")
        return value

    def validate(self, data):
        if data["type"] == "samples":
            points = data.get("points") or []
            weights = data.get("weights") or []
            if len(points) != len(weights):
                raise serializers.ValidationError(
                    {"weights": "points and weights must have the same length"}
                )
            for p in points:
                _check_finite(p, "Sample coordinates")
            if abs(sum(weights) - data["total_mass"]) > 1e-12:
                raise serializers.ValidationError(
                    {"total_mass": "total_mass must equal the sum of the sample weights"}
                )
        else:
            for name in ("lo", "hi", "samples"):
                if data.get(name) is None:
                    raise serializers.ValidationError({name: "This field is required for uniform_box."})
            if len(data["lo"]) != len(data["hi"]):
                raise serializers.ValidationError({"hi": "lo and hi must have the same length"})
            if any(l >= h for l, h in zip(data["lo"], data["hi"])):
                raise serializers.ValidationError({"hi": "hi must exceed lo in every coordinate"})
        return data


class MarginalSerializer(serializers.Serializer):
    d = serializers.IntegerField(min_value=1)
    atoms = AtomSerializer(many=True, required=False, default=list)
    diffuse = DiffuseSerializer(required=False, allow_null=True)

    def validate(self, data):
        d = data["d"]
        errors = {}
        bad = [i for i, a in enumerate(data.get("atoms") or []) if len(a["x"]) != d]
        if bad:
            errors["atoms"] = f"atoms {bad} do not have dimension {d}"
        diffuse = data.get("diffuse")
        if diffuse:
            if diffuse["type"] == "samples":
                if any(len(p) != d for p in diffuse.get("points") or []):
                    errors["diffuse"] = f"cloud points must have dimension {d}"
            elif len(diffuse["lo"]) != d:
                errors["diffuse"] = f"box corners must have dimension {d}"
        if errors:
            raise serializers.ValidationError(errors)
        return data


class OmegaSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=["identity", "power", "table"])
    s = serializers.FloatField(required=False)
    r = serializers.ListField(child=serializers.FloatField(), required=False)
    w = serializers.ListField(child=serializers.FloatField(), required=False)

    def validate(self, data):
        if data["kind"] == "power":
            s = data.get("s")
            if s is None or not math.isfinite(s) or s <= 0:
                raise serializers.ValidationError({"s": "power profiles need a positive exponent s"})
        if data["kind"] == "table":
            r = data.get("r") or []
            w = data.get("w") or []
            if len(r) < 2 or len(r) != len(w):
                raise serializers.ValidationError({"w": "table needs matching r and w lists of length >= 2"})
            _check_finite(r + w, "Table entries")
            if r[0] != 0.0 or w[0] != 0.0:
                raise serializers.ValidationError({"r": "table must start at r = 0 with w = 0"})
            if any(b <= a for a, b in zip(r, r[1:])):
                raise serializers.ValidationError({"r": "r must be strictly increasing"})
            if any(b <= a for a, b in zip(w, w[1:])):
                raise serializers.ValidationError({"w": "w must be strictly increasing"})
        return data


class FamilySerializer(serializers.Serializer):
    kind = serializers.ChoiceField(
        choices=["diffuse", "few_atoms", "many_atoms", "geometric_tail", "sharpness"]
    )
    d = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[1])
    N = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[2])
    diffuse_mass = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=1.0), default=[0.0])
    k = serializers.ListField(child=serializers.IntegerField(min_value=0), required=False)
    seeds = serializers.ListField(child=serializers.IntegerField(), default=[0])
    samples = serializers.IntegerField(min_value=1, default=256)
    expect = serializers.ChoiceField(choices=["pass", "reject"], default="pass")


class CaseSerializer(serializers.Serializer):
    marginal = serializers.CharField()
    N = serializers.IntegerField(min_value=1)
    expect = serializers.ChoiceField(choices=["pass", "reject"], default="pass")


class BatchSpecSerializer(serializers.Serializer):
    cases = CaseSerializer(many=True, required=False, default=list)
    families = FamilySerializer(many=True, required=False, default=list)
    omega = OmegaSerializer(required=False, allow_null=True)

    def validate(self, data):
        if not data.get("cases") and not data.get("families"):
            raise serializers.ValidationError("Batch spec lists no cases and no families")
        return data


class RunConfigSerializer(serializers.Serializer):
    seed = serializers.IntegerField()
    k_cutoff = serializers.IntegerField(min_value=1)
    sample_weight_divisor = serializers.IntegerField(min_value=1)
    duplicate_factor = serializers.FloatField(min_value=1.0)
    max_halvings = serializers.IntegerField(min_value=1)
    tail_safety = serializers.FloatField(min_value=0.0, max_value=1.0)
    cost_sample_cap = serializers.IntegerField(min_value=2)
    expansion_cap = serializers.IntegerField(min_value=1)
    atom_tol = serializers.FloatField(min_value=0.0)
    cloud_tol = serializers.FloatField(min_value=0.0)
    ledger_tol = serializers.FloatField(min_value=0.0)
    output_dir = serializers.CharField()

    def validate_tail_safety(self, value):
        if value <= 0:
            raise serializers.ValidationError("tail_safety must be positive")
        return value
