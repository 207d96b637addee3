"""Channel-group inventory.

A channel group is a set of input channels embedded together as one token.
The two Sentinel sensors plus NDVI cover the 13 data channels this artifact
actually populates; the remaining groups (ERA5, topography, location, land
cover) exist only so they can be masked and so their embedding weights can be
shown to stay untouched by training.
"""

from enum import Enum


class GroupKind(Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"
    STATIC = "static"


class ChannelGroup(Enum):
    S1 = "S1"
    S2_RGB = "S2_RGB"
    S2_RED_EDGE = "S2_RedEdge"
    S2_NIR = "S2_NIR"
    S2_SWIR = "S2_SWIR"
    NDVI = "NDVI"
    ERA5 = "ERA5"
    TOPO = "TOPO"
    LOCATION = "LOCATION"
    DYNAMIC_WORLD = "DYNAMIC_WORLD"

    def __repr__(self):  # terser in test output
        return self.value


# Canonical ordering. Token sequences, positional-encoding slots, parameter
# declaration order, and checkpoint layout all follow this order, so it must
# never be reshuffled.
CANONICAL_ORDER = (
    ChannelGroup.S1,
    ChannelGroup.S2_RGB,
    ChannelGroup.S2_RED_EDGE,
    ChannelGroup.S2_NIR,
    ChannelGroup.S2_SWIR,
    ChannelGroup.NDVI,
    ChannelGroup.ERA5,
    ChannelGroup.TOPO,
    ChannelGroup.LOCATION,
    ChannelGroup.DYNAMIC_WORLD,
)

GROUP_CHANNELS = {
    ChannelGroup.S1: ("VV", "VH"),
    ChannelGroup.S2_RGB: ("B2", "B3", "B4"),
    ChannelGroup.S2_RED_EDGE: ("B5", "B6", "B7"),
    ChannelGroup.S2_NIR: ("B8", "B8A"),
    ChannelGroup.S2_SWIR: ("B11", "B12"),
    ChannelGroup.NDVI: ("NDVI",),
    ChannelGroup.ERA5: ("temperature", "precipitation"),
    ChannelGroup.TOPO: ("elevation", "slope"),
    ChannelGroup.LOCATION: ("loc_x", "loc_y", "loc_z"),
    ChannelGroup.DYNAMIC_WORLD: ("landcover",),
}

GROUP_KIND = {
    ChannelGroup.S1: GroupKind.CONTINUOUS,
    ChannelGroup.S2_RGB: GroupKind.CONTINUOUS,
    ChannelGroup.S2_RED_EDGE: GroupKind.CONTINUOUS,
    ChannelGroup.S2_NIR: GroupKind.CONTINUOUS,
    ChannelGroup.S2_SWIR: GroupKind.CONTINUOUS,
    ChannelGroup.NDVI: GroupKind.CONTINUOUS,
    ChannelGroup.ERA5: GroupKind.CONTINUOUS,
    ChannelGroup.TOPO: GroupKind.STATIC,
    ChannelGroup.LOCATION: GroupKind.STATIC,
    ChannelGroup.DYNAMIC_WORLD: GroupKind.CATEGORICAL,
}

# Groups that actually carry data in this artifact (13 channels total).
DATA_GROUPS = (
    ChannelGroup.S1,
    ChannelGroup.S2_RGB,
    ChannelGroup.S2_RED_EDGE,
    ChannelGroup.S2_NIR,
    ChannelGroup.S2_SWIR,
    ChannelGroup.NDVI,
)

UNUSED_GROUPS = (
    ChannelGroup.ERA5,
    ChannelGroup.TOPO,
    ChannelGroup.LOCATION,
    ChannelGroup.DYNAMIC_WORLD,
)

# Sentinel-2 bands in chip plane order.
S2_BANDS = ("B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12")

# All 13 populated channels, in group order. Normalization stats files and
# packed pixel arrays use this ordering.
DATA_CHANNELS = ("VV", "VH") + S2_BANDS + ("NDVI",)


def group_slot(group: ChannelGroup) -> int:
    """Canonical slot index of a group (positional-encoding index)."""
    return CANONICAL_ORDER.index(group)


def n_channels(group: ChannelGroup) -> int:
    return len(GROUP_CHANNELS[group])


def sort_groups(groups) -> tuple:
    """Return the given groups in canonical order.

    Sets of enum members iterate in an order that varies between processes;
    anything order-sensitive must go through here.
    """
    return tuple(g for g in CANONICAL_ORDER if g in set(groups))
