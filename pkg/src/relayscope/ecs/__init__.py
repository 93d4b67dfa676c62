from .catalog import CatalogDiff, IngressCatalog, diff_catalogs, merge_catalogs
from .plan import ScanPlan, plan_scan
from .scanner import ScanConfig, ScanStats, build_catalog, enumerate_ingress, enumerate_ingress_async

__all__ = [
    "CatalogDiff", "IngressCatalog", "ScanConfig", "ScanPlan", "ScanStats", "build_catalog",
    "diff_catalogs", "enumerate_ingress", "enumerate_ingress_async", "merge_catalogs", "plan_scan",
]
