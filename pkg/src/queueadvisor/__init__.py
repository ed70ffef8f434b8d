"""Trace-driven wait/runtime prediction and hybrid-cloud placement advice.

The package replays scheduler workload logs (Standard Workload Format)
through a conservative-backfilling simulator, learns instance-based
wait-time and runtime estimators from the augmented trace, and advises
per job whether to run on-premise or in the cloud, taking prediction
uncertainty into account.
"""

__version__ = "0.1.0"
