from .egress import (
    EgressList, EgressRecord, diff_egress_lists, egress_stats, geo_distribution, load_egress_list,
    parse_egress_list,
)
from .ingress import (
    BOTH, UNKNOWN, PopulationRow, ShareRow, SubnetAttribution, ingress_shares, parse_population,
    population_attribution, subnet_attribution,
)
from .overlap import OverlapReport, last_hop_correlation, overlap_report, parse_paths
from .rotation import Observation, RotationTrace, rotation_stats

__all__ = [
    "BOTH", "UNKNOWN", "EgressList", "EgressRecord", "Observation", "OverlapReport",
    "PopulationRow", "RotationTrace", "ShareRow", "SubnetAttribution", "diff_egress_lists",
    "egress_stats", "geo_distribution", "ingress_shares", "last_hop_correlation",
    "load_egress_list", "overlap_report", "parse_egress_list", "parse_paths", "parse_population",
    "population_attribution", "rotation_stats", "subnet_attribution",
]
