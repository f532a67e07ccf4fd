"""Multi-behavior graph neural recommender."""
__version__ = "0.1.0"

from pathlib import Path as _Path

# six-event log (2 users, 3 items, view/buy) shipped for smoke runs
FIXTURE = _Path(__file__).with_name("data") / "fixture.tsv"
