"""Data-driven name map: torch state-dict paths -> runtime parameter names.

The map is generated by walking the architecture description, so it adapts
to variant, class count and block structure without hand-maintained tables.
Each entry also carries the expected tensor shape, which is how wrong
variant flags are caught before anything is written.
"""

from __future__ import annotations

from dataclasses import dataclass

from .torch_model import ArchSpec

_BN_FIELDS = (
    ("weight", "gamma"),
    ("bias", "beta"),
    ("running_mean", "mean"),
    ("running_var", "var"),
)


@dataclass(frozen=True)
class MapEntry:
    source: str  # torch state-dict path
    target: str  # runtime tensor name
    shape: tuple[int, ...]


@dataclass
class NameMap:
    entries: list[MapEntry]
    unmatched_source: list[str]
    unmatched_target: list[str]

    @property
    def matched(self) -> int:
        return len(self.entries)


def _bn(src_prefix: str, dst_prefix: str, c: int):
    for src_field, dst_field in _BN_FIELDS:
        yield MapEntry(f"{src_prefix}.{src_field}", f"{dst_prefix}.{dst_field}", (c,))


def expected_entries(spec: ArchSpec) -> list[MapEntry]:
    """Ordered (source, target, shape) triples covering every runtime tensor."""
    out: list[MapEntry] = []
    c1 = spec.channels[0]
    out.append(MapEntry("stem_conv.weight", "stem.conv.weight", (c1, 1, 5, 7)))
    out.extend(_bn("stem_bn", "stem.bn", c1))
    prev = c1
    for i, (c, depth) in enumerate(zip(spec.channels, spec.depths)):
        if i > 0:
            out.append(MapEntry(f"stages.{i}.downsample.weight",
                                f"stage{i + 1}.downsample.weight", (c, prev, 1, 1)))
            out.append(MapEntry(f"stages.{i}.downsample.bias",
                                f"stage{i + 1}.downsample.bias", (c,)))
        for j in range(depth):
            base_src = f"stages.{i}.blocks.{j}"
            base_dst = f"stage{i + 1}.block{j + 1}"
            for lbl in spec.group_labels():
                for b, k in enumerate(spec.kernels):
                    kh, kw = spec.kernel_shape(lbl, k)
                    out.append(MapEntry(
                        f"{base_src}.groups.{lbl}.branches.{b}.conv.weight",
                        f"{base_dst}.{lbl}.k{k}.weight", (c, 1, kh, kw)))
                    out.extend(_bn(f"{base_src}.groups.{lbl}.branches.{b}.bn",
                                   f"{base_dst}.{lbl}.k{k}.bn", c))
                if spec.identity and spec.identity_bn:
                    out.extend(_bn(f"{base_src}.groups.{lbl}.id_bn",
                                   f"{base_dst}.{lbl}.identity.bn", c))
            e = spec.expansion
            out.append(MapEntry(f"{base_src}.expand.weight", f"{base_dst}.expand.weight", (e * c, c, 1, 1)))
            out.append(MapEntry(f"{base_src}.expand.bias", f"{base_dst}.expand.bias", (e * c,)))
            out.append(MapEntry(f"{base_src}.project.weight", f"{base_dst}.project.weight", (c, e * c, 1, 1)))
            out.append(MapEntry(f"{base_src}.project.bias", f"{base_dst}.project.bias", (c,)))
        prev = c
    out.append(MapEntry("head.weight", "head.weight", (spec.num_classes, prev)))
    out.append(MapEntry("head.bias", "head.bias", (spec.num_classes,)))
    return out


def build_name_map(spec: ArchSpec, source_names) -> NameMap:
    """Pair the expected layout against the checkpoint's actual tensor names."""
    expected = expected_entries(spec)
    available = set(source_names)
    entries = [e for e in expected if e.source in available]
    matched_sources = {e.source for e in entries}
    unmatched_target = [e.target for e in expected if e.source not in available]
    unmatched_source = sorted(available - matched_sources)
    return NameMap(entries=entries, unmatched_source=unmatched_source,
                   unmatched_target=unmatched_target)


def runtime_config_dict(spec: ArchSpec, variant: str) -> dict:
    """Model-config header in the runtime's documented schema."""
    return {
        "variant": variant,
        "num_classes": spec.num_classes,
        "in_channels": 1,
        "activation": "relu",
        "stem": {"kernel": [5, 7], "stride": [2, 2]},
        "pool": {"kernel": [3, 3], "stride": [2, 2], "padding": [1, 1]},
        "stages": [
            {
                "channels": c,
                "depth": d,
                "downsample": i > 0,
                "expansion_ratio": spec.expansion,
                "kernel_sizes": list(spec.kernels),
                "has_identity": spec.identity,
                "identity_bn": spec.identity_bn,
                "use_2d_branches": spec.use_2d,
                "outer_residual": spec.outer_residual,
            }
            for i, (c, d) in enumerate(zip(spec.channels, spec.depths))
        ],
    }
