"""scikit-learn style front end: ``fit`` on dialogues, ``predict`` per-turn goals."""
from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import data as D
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import EvaluationReport, evaluate, predict_dialogues
from .features import DatabaseTable, Featurizer
from .models import ModelConfig, TrackerModel, TrackerSession, build_triples, canonical_kind
from .training import TrainConfig, train


def check_dialogues(X, name: str = "X") -> list:
    """Validate a collection of :class:`Dialogue` objects and return it as a list."""
    if isinstance(X, D.Dialogue):
        raise TypeError(f"{name} must be a sequence of dialogues, not a single Dialogue")
    try:
        X = list(X)
    except TypeError:
        raise TypeError(f"{name} must be an iterable of Dialogue objects") from None
    if not X:
        raise ValueError(f"{name} is empty")
    for i, d in enumerate(X):
        if not isinstance(d, D.Dialogue):
            raise TypeError(f"{name}[{i}] is {type(d).__name__}, expected Dialogue")
    return X


def check_database(database) -> DatabaseTable:
    if database is None:
        return DatabaseTable.empty()
    if isinstance(database, DatabaseTable):
        return database
    if isinstance(database, (str, Path)):
        return DatabaseTable.load(database)
    return DatabaseTable(list(database))


def check_ontology(ontology) -> dict | None:
    if ontology is None or isinstance(ontology, dict):
        return ontology
    return D.load_ontology(ontology)


class DialogueStateTracker(BaseEstimator):
    """GRU word-level goal tracker.

    Parameters mirror :class:`~dstrnn.training.TrainConfig`; ``model`` picks the
    head (``indep``, ``joint`` or ``encdec``).  ``database`` and ``ontology``
    may be objects or paths.  Fitted attributes end with an underscore.
    """

    def __init__(self, model="indep", embed_dim=100, hidden_dim=100, dropout_keep=0.7,
                 batch_size=10, n_buckets=10, max_epochs=50, patience=4, top_k=3,
                 learning_rate=1e-3, loss_scope="full_history", clip_norm=None, min_count=1,
                 ontology=None, database=None, seed=0, dtype="float32"):
        self.model = model
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.dropout_keep = dropout_keep
        self.batch_size = batch_size
        self.n_buckets = n_buckets
        self.max_epochs = max_epochs
        self.patience = patience
        self.top_k = top_k
        self.learning_rate = learning_rate
        self.loss_scope = loss_scope
        self.clip_norm = clip_norm
        self.min_count = min_count
        self.ontology = ontology
        self.database = database
        self.seed = seed
        self.dtype = dtype

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            dropout_keep=self.dropout_keep, n_buckets=self.n_buckets, max_epochs=self.max_epochs,
            patience_epochs=self.patience, top_k=self.top_k, learning_rate=self.learning_rate,
            clip_norm=self.clip_norm, seed=self.seed, loss_scope=self.loss_scope)

    def fit(self, X, y=None, X_dev=None, log_path=None, on_epoch=None):
        """Train on dialogues ``X``; early stopping uses ``X_dev`` (``X`` when omitted).

        ``y`` is ignored: gold goals are read from the dialogues.
        """
        X = check_dialogues(X)
        dev = check_dialogues(X_dev, "X_dev") if X_dev is not None else X
        config = self._train_config()
        db = check_database(self.database)
        vocab, slot_vocabs = D.build_vocabularies(X, check_ontology(self.ontology), self.min_count)
        featurizer = Featurizer(db, vocab)
        examples = D.build_all_examples(X, featurizer)
        kind = canonical_kind(self.model)
        model = TrackerModel(
            ModelConfig(kind, self.embed_dim, self.hidden_dim, self.dropout_keep, self.seed, self.dtype),
            vocab, slot_vocabs, db, build_triples(examples) if kind == "joint" else None)
        result = train(model, examples, config, lambda m: evaluate(m, dev).joint_goal_accuracy,
                       log_path=log_path, on_epoch=on_epoch)
        self.model_ = model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_score_ = result.best_accuracy
        self.n_examples_ = len(examples)
        return self

    def predict(self, X) -> list[list[D.GoalState]]:
        """Goal estimate after every turn of every dialogue."""
        check_is_fitted(self, "model_")
        return predict_dialogues(self.model_, check_dialogues(X))

    def evaluate(self, X, dataset: str = "", onset: str = "joint") -> EvaluationReport:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, check_dialogues(X), dataset, onset)

    def score(self, X, y=None) -> float:
        """Schedule-2 joint goal accuracy."""
        return self.evaluate(X).joint_goal_accuracy

    def session(self) -> TrackerSession:
        check_is_fitted(self, "model_")
        return self.model_.session()

    def save(self, path, meta: dict | None = None) -> Checkpoint:
        check_is_fitted(self, "model_")
        info = {"params": _jsonable(self.get_params()), "best_epoch": self.best_epoch_,
                "dev_accuracy": self.best_score_}
        info.update(meta or {})
        return save_checkpoint(self.model_, info, path)

    @classmethod
    def load(cls, path) -> "DialogueStateTracker":
        ckpt = load_checkpoint(path)
        params = {k: v for k, v in ckpt.meta.get("params", {}).items()
                  if k in cls._get_param_names()}
        est = cls(**params)
        est.model_ = ckpt.build_model()
        est.best_epoch_ = ckpt.meta.get("best_epoch")
        est.best_score_ = ckpt.meta.get("dev_accuracy")
        est.history_ = []
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, (str, int, float, bool)) or v is None:
            out[k] = v
        elif isinstance(v, Path):
            out[k] = str(v)
    return out


__all__ = ["DialogueStateTracker", "check_dialogues", "check_database", "check_ontology",
           "NotFittedError"]
