from .geo import UNKNOWN, GeoInfo, GeoTable, geo_lookup
from .report import Report, build_report
from .stats import ProxyStats, compute_stats, lifetime_uptime, stats_csv
from .store import Ledger, LedgerError, LedgerLocked

__all__ = [
    "GeoInfo", "GeoTable", "Ledger", "LedgerError", "LedgerLocked", "ProxyStats", "Report", "UNKNOWN",
    "build_report", "compute_stats", "geo_lookup", "lifetime_uptime", "stats_csv",
]
