"""feedlab: a self-hostable platform for feed-based social-media experiments.

Researchers configure multi-condition studies; participants browse ranked
feeds whose dwell and engagement are measured; experiment worlds evolve
independently; interaction data exports in analysis-ready form. A
synthetic-agent simulator exercises every dynamic without human subjects.
"""

__version__ = "0.1.0"
