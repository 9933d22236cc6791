"""refgame: a laboratory for collaborative referring games over 2-D dot views.

Scenario generation, annotated-corpus ingestion and analytics, baseline
neural models (built on a small verified numpy kernel), selfplay evaluation
and static SVG rendering, all driven from one CLI (``refgame --help``).
"""

__version__ = "0.1.0"
