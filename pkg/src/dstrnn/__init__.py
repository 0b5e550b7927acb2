"""Word-level recurrent dialogue state tracking for restaurant-domain goals."""
from .data import GoalState, Dialogue, Turn, load_dstc2
from .estimator import DialogueStateTracker
from .models import TrackerModel, TrackerSession, track_word

__version__ = "0.1.0"

__all__ = ["GoalState", "Dialogue", "Turn", "load_dstc2", "DialogueStateTracker",
           "TrackerModel", "TrackerSession", "track_word"]
